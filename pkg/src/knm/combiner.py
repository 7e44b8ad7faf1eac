"""Blending the LM distribution with the retrieval distribution.

The weight on retrieval is a per-position posterior probability that
the LM is about to be wrong. Prior: the LM's argmax error rate on the
datastore corpus, encoded as a Beta distribution whose strength equals
the observation window size. Evidence: the last ``window_size``
usable context positions, each replayed and classified as a correct
prediction or a mistake. Positions where the LM and retrieval are both
right are dropped from the sample entirely — they carry no signal about
which side to trust — and the window reaches further back to replace
them.

Fixed-weight and prior-only variants live behind the same entry points
for baseline and ablation runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Sequence

import numpy as np

from .errors import VocabMismatch
from .lm import LanguageModel, argmax_token
from .datastore import Datastore
from .retrieval import NeighborSet, RetrievalIndex, retrieval_distribution
from .tokenizer import EOL_ID


class Mode(str, Enum):
    """Completion strategies sharing one pipeline."""

    KNM_BAYESIAN = "knm_bayesian"  # decoupled store, posterior weight
    KNM_FIXED_LAMBDA = "knm_fixed_lambda"  # decoupled store, constant weight
    KNM_PRIOR_ONLY = "knm_prior_only"  # decoupled store, weight = prior err
    KNN_LM_BASELINE = "knn_lm_baseline"  # full store, constant weight
    LM_ONLY = "lm_only"  # no retrieval at all


class Observation(Enum):
    """Outcome of replaying one context position against its ground truth."""

    CORRECT = "correct"  # LM argmax hit the actual token
    MISTAKE = "mistake"  # LM argmax missed it
    IGNORED = "ignored"  # LM and retrieval both hit -> dropped from the sample


@dataclass(frozen=True)
class ObservationWindow:
    """The last ``window_size`` non-ignored observations before a position.

    May hold fewer events near the start of a sequence. ``alpha`` counts
    the mistakes among them.
    """

    window_size: int
    events: tuple[Observation, ...] = ()

    def __post_init__(self) -> None:
        if self.window_size < 1:
            raise ValueError(f"window_size must be >= 1, got {self.window_size}")
        if len(self.events) > self.window_size:
            raise ValueError(
                f"{len(self.events)} events exceed window size {self.window_size}"
            )
        if any(e is Observation.IGNORED for e in self.events):
            raise ValueError("ignored observations cannot occupy window slots")

    @property
    def alpha(self) -> int:
        return sum(1 for e in self.events if e is Observation.MISTAKE)


@dataclass(frozen=True)
class BetaPrior:
    """Beta(a, b) belief over the LM's per-position error probability."""

    a: float
    b: float

    def __post_init__(self) -> None:
        if self.a < 0 or self.b < 0:
            raise ValueError(f"Beta parameters must be >= 0, got ({self.a}, {self.b})")

    @classmethod
    def from_error_rate(cls, err: float, strength: int) -> "BetaPrior":
        """Prior centered on ``err`` with pseudo-count mass ``strength``."""
        if not 0.0 <= err <= 1.0:
            raise ValueError(f"error rate must be in [0, 1], got {err}")
        return cls(err * strength, (1.0 - err) * strength)

    def posterior_mean(self, mistakes: int, observed: int) -> float:
        """Mean error probability after ``mistakes`` out of ``observed``."""
        return (self.a + mistakes) / (self.a + self.b + observed)


@dataclass(frozen=True)
class CombinerConfig:
    mode: Mode
    k: int = 8
    window_size: int = 8
    fixed_lambda: float = 0.1  # read only by the fixed-weight modes
    # Alternative reading of the both-correct rule: count those positions
    # as correct instead of dropping them. Off by default.
    count_ignored_as_correct: bool = False

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.window_size < 1:
            raise ValueError(f"window_size must be >= 1, got {self.window_size}")
        if not 0.0 <= self.fixed_lambda <= 1.0:
            raise ValueError(f"fixed_lambda must be in [0, 1], got {self.fixed_lambda}")


class Completion(NamedTuple):
    token: int
    distribution: np.ndarray
    weight: float  # retrieval share actually used


def classify_observation(
    lm_argmax: int,
    retrieval_top1: int | None,
    actual: int,
    count_ignored_as_correct: bool = False,
) -> Observation:
    """Classify one replayed position.

    A missing retrieval answer (empty datastore) counts as retrieval
    being wrong, so such positions are never dropped.
    """
    if lm_argmax != actual:
        return Observation.MISTAKE
    if retrieval_top1 == actual and not count_ignored_as_correct:
        return Observation.IGNORED
    return Observation.CORRECT


def compute_lambda(window: ObservationWindow, err: float) -> float:
    """Posterior-mean retrieval weight given the window evidence.

    With a full window of N events containing alpha mistakes this is
    (alpha/N + err) / 2; with no events it degrades to the prior err.
    """
    if not 0.0 <= err <= 1.0:
        raise ValueError(f"error rate must be in [0, 1], got {err}")
    prior = BetaPrior.from_error_rate(err, window.window_size)
    return prior.posterior_mean(window.alpha, len(window.events))


def interpolate(
    p_lm: np.ndarray, p_retrieval: np.ndarray | None, weight: float
) -> np.ndarray:
    """weight * retrieval + (1 - weight) * LM; LM untouched when no evidence."""
    if not 0.0 <= weight <= 1.0:
        raise ValueError(f"weight must be in [0, 1], got {weight}")
    if p_retrieval is None:
        return p_lm
    if p_lm.shape != p_retrieval.shape:
        raise VocabMismatch(
            f"distribution sizes differ: {p_lm.shape} vs {p_retrieval.shape}"
        )
    return weight * p_retrieval + (1.0 - weight) * p_lm


@dataclass
class ReplayCache:
    """Per-sequence memo of replayed positions.

    Valid only while queries address prefixes of one fixed token
    sequence; the evaluation harness keeps one per (sequence, mode).
    Entry ``t`` describes the prefix of length ``t``.
    """

    p_lm: dict[int, np.ndarray] = field(default_factory=dict)
    neighbors: dict[int, NeighborSet] = field(default_factory=dict)


def _lm_at(
    tokens: Sequence[int], t: int, lm: LanguageModel, cache: ReplayCache | None
) -> np.ndarray:
    if cache is not None:
        hit = cache.p_lm.get(t)
        if hit is not None:
            return hit
    probs = lm.predict(tokens[:t])
    if cache is not None:
        cache.p_lm[t] = probs
    return probs


def _neighbors_at(
    tokens: Sequence[int],
    t: int,
    lm: LanguageModel,
    index: RetrievalIndex,
    k: int,
    cache: ReplayCache | None,
) -> NeighborSet:
    if cache is not None:
        hit = cache.neighbors.get(t)
        if hit is not None:
            return hit
    found = index.search(lm.embed(tokens[:t]), k)
    if cache is not None:
        cache.neighbors[t] = found
    return found


def classify_position(
    tokens: Sequence[int],
    t: int,
    lm: LanguageModel,
    index: RetrievalIndex,
    config: CombinerConfig,
    cache: ReplayCache | None = None,
) -> Observation:
    """Replay position ``t`` (ground truth ``tokens[t]``) and classify it."""
    p_lm = _lm_at(tokens, t, lm, cache)
    top1 = _neighbors_at(tokens, t, lm, index, config.k, cache).top_value()
    return classify_observation(
        argmax_token(p_lm), top1, tokens[t], config.count_ignored_as_correct
    )


def build_window(
    tokens: Sequence[int],
    end: int,
    lm: LanguageModel,
    index: RetrievalIndex,
    config: CombinerConfig,
    cache: ReplayCache | None = None,
) -> ObservationWindow:
    """Window of evidence for predicting position ``end``.

    Walks backward from ``end - 1``, skipping ignored positions without
    consuming a slot, until the window is full or the sequence start is
    reached.
    """
    newest_first: list[Observation] = []
    t = end - 1
    while t >= 0 and len(newest_first) < config.window_size:
        obs = classify_position(tokens, t, lm, index, config, cache)
        if obs is not Observation.IGNORED:
            newest_first.append(obs)
        t -= 1
    return ObservationWindow(config.window_size, tuple(reversed(newest_first)))


def _weight_for(
    context: Sequence[int],
    lm: LanguageModel,
    index: RetrievalIndex,
    store: Datastore,
    config: CombinerConfig,
    cache: ReplayCache | None,
) -> float:
    if config.mode is Mode.LM_ONLY:
        return 0.0
    if config.mode in (Mode.KNM_FIXED_LAMBDA, Mode.KNN_LM_BASELINE):
        return config.fixed_lambda
    if config.mode is Mode.KNM_PRIOR_ONLY:
        return store.err()
    window = build_window(context, len(context), lm, index, config, cache)
    return compute_lambda(window, store.err())


def complete_token(
    context: Sequence[int],
    lm: LanguageModel,
    index: RetrievalIndex,
    store: Datastore,
    config: CombinerConfig,
    cache: ReplayCache | None = None,
) -> Completion:
    """Predict the next token after ``context``.

    Ties in the combined distribution break to the lowest token id.
    The optional cache must belong to the sequence ``context`` is a
    prefix of.
    """
    t = len(context)
    p_lm = _lm_at(context, t, lm, cache)
    if config.mode is Mode.LM_ONLY:
        # Skip retrieval entirely; this mode's cost is the LM alone.
        return Completion(argmax_token(p_lm), p_lm, 0.0)
    neighbors = _neighbors_at(context, t, lm, index, config.k, cache)
    p_ret = retrieval_distribution(neighbors, len(p_lm))
    weight = _weight_for(context, lm, index, store, config, cache)
    combined = interpolate(p_lm, p_ret, weight)
    return Completion(argmax_token(combined), combined, weight)


def complete_line(
    context: Sequence[int],
    lm: LanguageModel,
    index: RetrievalIndex,
    store: Datastore,
    config: CombinerConfig,
    max_tokens: int,
    cache: ReplayCache | None = None,
) -> list[int]:
    """Greedy-decode until an end-of-line token or ``max_tokens``.

    The retrieval weight is fixed at the completion point: generated
    tokens extend the context seen by the LM and retrieval, but they
    have no ground truth, so they contribute no new observations.
    """
    if max_tokens < 1:
        raise ValueError(f"max_tokens must be >= 1, got {max_tokens}")
    weight = _weight_for(context, lm, index, store, config, cache)
    tokens = list(context)
    out: list[int] = []
    while len(out) < max_tokens:
        p_lm = lm.predict(tokens)
        if config.mode is Mode.LM_ONLY:
            combined = p_lm
        else:
            neighbors = index.search(lm.embed(tokens), config.k)
            combined = interpolate(
                p_lm, retrieval_distribution(neighbors, len(p_lm)), weight
            )
        tok = argmax_token(combined)
        out.append(tok)
        tokens.append(tok)
        if tok == EOL_ID:
            break
    return out
