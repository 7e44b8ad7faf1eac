"""Evaluation metrics for token and line completion.

Line-level scoring works on rendered text: tokens joined by single
spaces, except that no space precedes closing punctuation
(``) ] } ; , . :``), and end-of-line markers become bare newlines.
Exact match ignores trailing whitespace; edit similarity is
character-level Levenshtein scaled to [0, 100].
"""

from __future__ import annotations

from typing import Iterable, Sequence

from .errors import EmptyInput, LengthMismatch
from .tokenizer import EOL_TOKEN, TokenClass, classify

_CLOSERS = frozenset(")]};,.:")


def token_accuracy(predictions: Sequence[int], actuals: Sequence[int]) -> float:
    """Percent of positions where prediction equals ground truth."""
    if len(predictions) != len(actuals):
        raise LengthMismatch(
            f"{len(predictions)} predictions vs {len(actuals)} actuals"
        )
    if not actuals:
        raise EmptyInput("token accuracy over zero positions is undefined")
    matches = sum(1 for p, a in zip(predictions, actuals) if p == a)
    return 100.0 * matches / len(actuals)


def per_class_accuracy(
    hits: Sequence[bool],
    actual_tokens: Sequence[str],
    language: str,
) -> dict[TokenClass, tuple[int, int]]:
    """(correct, total) per token class, keyed by the actual token's class.

    ``hits[i]`` says whether position i was predicted correctly; the id
    comparison happens at the caller. Every class appears in the result,
    absent ones as (0, 0), so the totals always sum to the position
    count.
    """
    if len(hits) != len(actual_tokens):
        raise LengthMismatch(
            f"{len(hits)} outcomes vs {len(actual_tokens)} actual tokens"
        )
    out = {cls: [0, 0] for cls in TokenClass}
    for hit, token in zip(hits, actual_tokens):
        bucket = out[classify(token, language)]
        bucket[1] += 1
        if hit:
            bucket[0] += 1
    return {cls: (c, t) for cls, (c, t) in out.items()}


def levenshtein(a: str, b: str) -> int:
    """Classic edit distance (insert/delete/substitute, unit costs)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[len(b)]


def edit_similarity(a: str, b: str) -> float:
    """100 * (1 - distance / max length); two empty strings score 100."""
    longest = max(len(a), len(b))
    if longest == 0:
        return 100.0
    return 100.0 * (1.0 - levenshtein(a, b) / longest)


def exact_match(a: str, b: str) -> int:
    """1 iff the strings match after stripping trailing whitespace."""
    return int(a.rstrip() == b.rstrip())


def render_tokens(tokens: Iterable[str]) -> str:
    """Join lexemes into scoring text (see module docstring for the rule)."""
    parts: list[str] = []
    at_line_start = True
    for tok in tokens:
        if tok == EOL_TOKEN:
            parts.append("\n")
            at_line_start = True
            continue
        if not at_line_start and tok not in _CLOSERS:
            parts.append(" ")
        parts.append(tok)
        at_line_start = False
    return "".join(parts)
