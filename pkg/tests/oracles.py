"""Independent reference implementations used to cross-check the engine.

Everything here is written the slow, obvious way — pure Python loops,
no shared code with the package beyond calling the public LM contract —
so agreement between an oracle and the engine is meaningful evidence.

Where bitwise equality is asserted (nearest-neighbor distances), the
arithmetic evaluation order matters: squared differences accumulate
coordinate 0 first, exactly like the engine, over the same
float32-stored keys widened to Python floats.
"""

from __future__ import annotations

import math


def brute_force_search(keys, values, query, k):
    """Exhaustive scan: the k nearest entries under true L2 distance.

    ``keys`` is the float32 key matrix as stored, ``query`` a float64
    vector. Returns [(entry_index, distance, value), ...] sorted by
    (distance, entry_index).
    """
    scored = []
    for i in range(len(keys)):
        acc = 0.0
        for j in range(len(query)):
            diff = float(keys[i][j]) - float(query[j])
            acc += diff * diff
        scored.append((math.sqrt(acc), i))
    scored.sort()
    return [(i, dist, int(values[i])) for dist, i in scored[:k]]


def neighbor_distribution(neighbors, vocab_size):
    """Softmax over negative distances, shifted by the minimum distance."""
    if not neighbors:
        return None
    d_min = min(dist for _, dist, _ in neighbors)
    probs = [0.0] * vocab_size
    for _, dist, value in neighbors:
        probs[value] += math.exp(-(dist - d_min))
    total = sum(probs)
    return [p / total for p in probs]


def levenshtein_matrix(a, b):
    """Full quadratic DP table; returns the edit distance."""
    rows = len(a) + 1
    cols = len(b) + 1
    d = [[0] * cols for _ in range(rows)]
    for i in range(rows):
        d[i][0] = i
    for j in range(cols):
        d[0][j] = j
    for i in range(1, rows):
        for j in range(1, cols):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            d[i][j] = min(d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + cost)
    return d[len(a)][len(b)]


def ngram_counts(sequences, order):
    """Context-tuple -> {token: count} maps for every level up to order."""
    tables = [{} for _ in range(order)]
    for seq in sequences:
        for t in range(len(seq)):
            for g in range(order):
                if t - g < 0:
                    continue
                ctx = tuple(seq[t - g : t])
                table = tables[g].setdefault(ctx, {})
                table[seq[t]] = table.get(seq[t], 0) + 1
    return tables


def ngram_probability(tables, context, token, vocab_size, smoothing_k):
    """Add-k probability with backoff to the longest seen context level."""
    order = len(tables)
    for g in range(order - 1, -1, -1):
        ctx = tuple(context[len(context) - g :]) if g > 0 else ()
        if len(ctx) != g:
            continue
        succ = tables[g].get(ctx)
        if succ is None:
            continue
        total = sum(succ.values())
        return (succ.get(token, 0) + smoothing_k) / (total + smoothing_k * vocab_size)
    return 1.0 / vocab_size


def ngram_perplexity(tables, sequences, vocab_size, smoothing_k):
    nll = 0.0
    count = 0
    for seq in sequences:
        for t in range(len(seq)):
            p = ngram_probability(tables, seq[:t], seq[t], vocab_size, smoothing_k)
            nll -= math.log(p)
            count += 1
    return math.exp(nll / count)


def lm_argmax(lm, context):
    """Lowest-id argmax of the LM's distribution, via the public contract."""
    probs = lm.predict(context)
    best = 0
    for i in range(1, len(probs)):
        if probs[i] > probs[best]:
            best = i
    return best


def replay_mistakes(sequences, lm):
    """Per-position argmax replay.

    Returns (total_positions, mistake_count, flags) where flags[s][t] is
    True when the LM's argmax at that position misses the actual token.
    """
    total = 0
    mistakes = 0
    flags = []
    for seq in sequences:
        seq_flags = []
        for t in range(len(seq)):
            total += 1
            wrong = lm_argmax(lm, seq[:t]) != seq[t]
            seq_flags.append(wrong)
            if wrong:
                mistakes += 1
        flags.append(seq_flags)
    return total, mistakes, flags


def replay_lambda(seq, position, lm, keys, values, k, window_size, err):
    """Posterior-mean retrieval weight at one position, from scratch.

    Walks backward over earlier positions, classifying each with the
    LM's argmax and the brute-force retrieval top-1; positions where
    both match the actual token are skipped without consuming a window
    slot.
    """
    observed = 0
    alpha = 0
    t = position - 1
    while t >= 0 and observed < window_size:
        actual = seq[t]
        lm_hit = lm_argmax(lm, seq[:t]) == actual
        neighbors = brute_force_search(keys, values, lm.embed(seq[:t]), k)
        ret_hit = bool(neighbors) and neighbors[0][2] == actual
        if lm_hit and ret_hit:
            t -= 1
            continue
        observed += 1
        if not lm_hit:
            alpha += 1
        t -= 1
    return (err * window_size + alpha) / (window_size + observed)


def replay_completion(seq, position, lm, keys, values, k, window_size, err):
    """Full per-position replay: (predicted_token, weight).

    Combines the LM distribution and the neighbor softmax with the
    replayed posterior weight, then takes the lowest-id argmax.
    """
    p_lm = lm.predict(seq[:position])
    neighbors = brute_force_search(keys, values, lm.embed(seq[:position]), k)
    p_ret = neighbor_distribution(neighbors, len(p_lm))
    weight = replay_lambda(seq, position, lm, keys, values, k, window_size, err)
    if p_ret is None:
        combined = [float(p) for p in p_lm]
    else:
        combined = [
            weight * r + (1.0 - weight) * float(l) for l, r in zip(p_lm, p_ret)
        ]
    best = 0
    for i in range(1, len(combined)):
        if combined[i] > combined[best]:
            best = i
    return best, weight
