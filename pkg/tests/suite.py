"""Synthetic domain-shift corpora for the directional experiments.

Three corpora over one shared token pool:

* ``corpus A`` — background text the reference LM trains on. Filler
  tokens follow a fixed successor cycle, so the trained LM nails the
  background almost perfectly. Every domain token appears exactly once,
  spliced into the middle of an ordinary chain line, so it is
  in-vocabulary but its idiom transitions are never observed.
* ``db corpus`` — the adaptation target: background plus 30 six-token
  domain idioms (mod_i fn_i api_i call_i arg_i done_i), each repeated
  at least 20 times at seeded positions.
* ``test corpus`` — same distribution as the db corpus, fresh draws,
  each idiom appearing at least 10 more times.

Design notes that keep the comparison clean:

- Filler lines walk the successor cycle and stop at the first
  designated stop token (every 8th token of the cycle), so line length
  is a deterministic function of the start token: the LM learns
  end-of-line exactly and newline positions never differ between modes.
- Idiom tokens and the two per-idiom glue tokens opening each planted
  line never appear inside filler chains, so the retrieval keys for an
  idiom cluster tightly — neighbour votes are unanimous where the
  idiom continues — without colliding with background contexts.
- Each planted line opens with two independently drawn fillers and
  exits through a fresh random filler walk, so the retrieval keys of
  idiom entries differ from one repetition to the next: far-away
  queries see scattered votes instead of an accidental bloc, while the
  idiom tokens themselves still dominate the keys of nearby queries.
- Domain sightings in corpus A sit mid-line, never at line starts, so
  the LM's line-opening statistics stay sharp; everywhere the store
  can help, the LM is unsure, and everywhere the LM is sure, the
  posterior weight both modes use stays below the flip point.
- Every db and test record opens with a filler line, so the very short
  contexts at record starts only ever retrieve the (uninformative)
  line-start entries of other records.
"""

from __future__ import annotations

import random

FILLERS = [
    # identifiers
    "buf", "idx", "ptr", "node", "head", "tail", "left", "right",
    "keyv", "val", "tmp", "acc", "root", "leaf", "span", "mark",
    "base", "step", "pos", "lim", "seq", "cnt", "obj", "ref",
    # keywords
    "if", "for", "while", "return", "int", "new",
    # literals
    "0", "1", "42", '"s"',
    # punctuation and operators
    ";", ",", ".", "=", "+", "==",
]

N_IDIOMS = 30
DB_REPS = 22
TEST_REPS = 11
A_FILLER_LINES_PER_START = 9
DB_FILLER_LINES = 600  # line totals divisible by LINES_PER_RECORD
TEST_FILLER_LINES = 300
STOP_SPACING = 8  # divides len(FILLERS): the cycle has no long seam
LINES_PER_RECORD = 3

# Stale-association groups: contexts where the adaptation corpus pulls
# toward a continuation the test corpus never uses.
N_TRAPS = 16
TRAP_DB_REPS = 21
TRAP_TEST_REPS = 3
TRAP_VALUE_POOL = 5

LM_SPEC = "ref:order=3,k=0.025"


def idiom(i: int) -> list[str]:
    """Domain idiom ``i``: a fixed four-token phrase."""
    return [f"mod{i}", f"fn{i}", f"api{i}", f"done{i}"]


def trap_values() -> list[str]:
    """Continuations that appear only in the adaptation corpus."""
    return [f"opt{j}" for j in range(TRAP_VALUE_POOL)]


class _Chain:
    """Fixed successor cycle over the filler pool with stop tokens."""

    def __init__(self, rng: random.Random):
        order = FILLERS[:]
        rng.shuffle(order)
        self.cycle = order
        self.succ = {order[i]: order[(i + 1) % len(order)] for i in range(len(order))}
        self.stops = {order[i] for i in range(STOP_SPACING - 1, len(order), STOP_SPACING)}
        self.starts = [t for t in order if t not in self.stops]
        # Idiom lines open with one pool and pick their second token from a
        # disjoint pool, so a line-opening context can never mimic the
        # interior context right before an idiom.
        half = len(self.starts) // 2
        self.idiom_openers = self.starts[:half]
        self.idiom_interiors = self.starts[half:]

    def walk(self, start: str) -> list[str]:
        """Tokens from ``start`` through the first stop token."""
        out = [start]
        while out[-1] not in self.stops:
            out.append(self.succ[out[-1]])
        return out

    def filler_line(self, rng: random.Random) -> list[str]:
        return self.walk(rng.choice(self.starts))

    def idiom_line(self, i: int, exit_start: str, rng: random.Random) -> list[str]:
        first = rng.choice(self.idiom_openers)
        second = rng.choice(self.idiom_interiors)
        return [first, second] + idiom(i) + self.walk(exit_start)


def _records(chunks: list[list[list[str]]], prefix: str) -> list[tuple[str, str]]:
    records = []
    for r, chunk in enumerate(chunks):
        text = "".join(" ".join(line) + "\n" for line in chunk)
        records.append((f"{prefix}{r:04d}.java", text))
    return records


def _chunk(lines: list[list[str]]) -> list[list[list[str]]]:
    return [lines[r : r + LINES_PER_RECORD] for r in range(0, len(lines), LINES_PER_RECORD)]


def _pack_filler_first(
    filler: list[list[str]],
    others: list[list[str]],
    pinned: list[list[str]],
    rng: random.Random,
) -> list[list[list[str]]]:
    """Records of three lines, each opened by a filler line.

    ``pinned`` lines land in the second slot of a record whose opening
    filler line is long, so the context right before them is a settled
    stretch of ordinary background.
    """
    total = len(filler) + len(others) + len(pinned)
    assert total % LINES_PER_RECORD == 0
    n_rec = total // LINES_PER_RECORD
    rng.shuffle(filler)
    openers, spare = filler[:n_rec], filler[n_rec:]
    long_openers = [ln for ln in openers if len(ln) >= 6]
    short_openers = [ln for ln in openers if len(ln) < 6]
    assert len(long_openers) >= len(pinned)
    tail = long_openers[len(pinned) :] + short_openers
    rng.shuffle(tail)
    openers = long_openers[: len(pinned)] + tail
    rest = spare + others
    rng.shuffle(rest)
    records = []
    for r in range(n_rec):
        if r < len(pinned):
            records.append([openers[r], pinned[r], rest.pop()])
        else:
            records.append([openers[r], rest.pop(), rest.pop()])
    rng.shuffle(records)
    return records


def build_suite(seed: int = 20260821):
    """Returns (a_records, db_records, test_records)."""
    rng = random.Random(seed)
    chain = _Chain(rng)

    # --- corpus A: background plus one isolated sighting per domain token.
    # Each sighting line stops at the domain token so corpus A never teaches
    # a continuation for it: the trained model knows these tokens exist but
    # stays maximally unsure about what follows them.
    a_lines: list[list[str]] = []
    for start in chain.starts:
        for _ in range(A_FILLER_LINES_PER_START):
            a_lines.append(chain.walk(start))
    for i in range(N_IDIOMS):
        for tok in idiom(i):
            while True:
                lead = rng.choice(chain.starts)
                if chain.succ[lead] not in chain.stops:
                    break
            a_lines.append([lead, chain.succ[lead], tok])

    # --- stale-association groups: a non-chain pair (u, v) that corpus A
    # continues exactly one way, exactly once. The db corpus keeps pulling
    # (u, v) toward surprise continuations the test corpus never follows.
    u_pool = rng.sample(chain.idiom_interiors, N_TRAPS)
    v_pool = chain.idiom_openers[:]
    rng.shuffle(v_pool)
    traps: list[tuple[str, str, str]] = []
    for u in u_pool:
        v = next(x for x in v_pool if x != chain.succ[u])
        v_pool.remove(v)
        w = next(x for x in rng.sample(chain.starts, 2) if x != chain.succ[v])
        traps.append((u, v, w))
        a_lines.append([u, v] + chain.walk(w))
    rng.shuffle(a_lines)

    surprises = trap_values()
    db_trap_lines = []
    for u, v, _ in traps:
        vals = [surprises[r % TRAP_VALUE_POOL] for r in range(TRAP_DB_REPS)]
        rng.shuffle(vals)
        db_trap_lines.extend([u, v, val] for val in vals)
    test_trap_lines = [
        [u, v] + chain.walk(w) for u, v, w in traps for _ in range(TRAP_TEST_REPS)
    ]

    def domain_corpus(
        reps: int,
        n_filler: int,
        others: list[list[str]],
        pinned: list[list[str]],
    ) -> list[list[list[str]]]:
        # Distinct continuation per repetition: keeps the retrieved votes at
        # post-idiom positions spread thin instead of piling on one token.
        idiom_lines = [
            chain.idiom_line(i, exit_start, rng)
            for i in range(N_IDIOMS)
            for exit_start in rng.sample(chain.starts, reps)
        ]
        filler = [chain.filler_line(rng) for _ in range(n_filler)]
        return _pack_filler_first(filler, idiom_lines + others, pinned, rng)

    db_chunks = domain_corpus(DB_REPS, DB_FILLER_LINES, db_trap_lines, [])
    test_chunks = domain_corpus(TEST_REPS, TEST_FILLER_LINES, [], test_trap_lines)

    return (
        _records(_chunk(a_lines), "bg"),
        _records(db_chunks, "db"),
        _records(test_chunks, "use"),
    )
