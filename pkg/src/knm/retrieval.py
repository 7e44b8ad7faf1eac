"""Exact nearest-neighbor search over datastore keys.

Search is a full scan — no approximation, no pruning — so results are
reproducible down to the bit. Squared distances are accumulated
coordinate-by-coordinate in index order (coordinate 0 first), which
pins the floating-point evaluation order: a plain Python loop over the
same float64 numbers produces identical sums, and tests rely on that.

The neighbor set feeds :func:`retrieval_distribution`, a softmax over
negative true (square-rooted) L2 distances in which every occurrence of
a token adds its own mass. Tokens that never appear among the neighbors
get probability zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .datastore import Datastore
from .errors import DimensionMismatch


class Neighbor(NamedTuple):
    entry_index: int
    distance: float  # true L2, not squared
    value: int


@dataclass
class NeighborSet:
    """Nearest entries for one query, ascending by distance.

    Ties in distance are ordered by ascending entry index. ``k`` is the
    requested neighbor count; ``items`` holds ``min(k, len(store))``.
    """

    items: list[Neighbor]
    k: int

    def __len__(self) -> int:
        return len(self.items)

    def top_value(self) -> int | None:
        """Value of the closest entry, or None when the store was empty."""
        return self.items[0].value if self.items else None


class RetrievalIndex:
    """In-memory exact-search index over a datastore's keys.

    Keys are widened to float64 once at construction and laid out
    column-major so each coordinate's slice is contiguous. The index is
    immutable; concurrent searches are safe.
    """

    def __init__(self, store: Datastore):
        self.dim = store.dim
        self._values = store.values
        # (dim, n) layout: row j holds coordinate j of every key.
        self._columns = np.ascontiguousarray(store.keys.astype(np.float64).T)

    def __len__(self) -> int:
        return len(self._values)

    def search(self, query: np.ndarray, k: int) -> NeighborSet:
        """The ``min(k, n)`` entries nearest to ``query`` under L2."""
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        q = np.asarray(query, dtype=np.float64)
        if q.shape != (self.dim,):
            raise DimensionMismatch(
                f"query has shape {q.shape}, index dimension is {self.dim}"
            )
        n = len(self._values)
        if n == 0:
            return NeighborSet([], k)
        acc = np.zeros(n)
        for j in range(self.dim):
            diff = self._columns[j] - q[j]
            acc += diff * diff
        order = _smallest(acc, min(k, n))
        items = [
            Neighbor(int(i), math.sqrt(float(acc[i])), int(self._values[i]))
            for i in order
        ]
        return NeighborSet(items, k)


def _smallest(acc: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k smallest values, ties broken by ascending index.

    Exactly equivalent to ``np.argsort(acc, kind="stable")[:k]``; the
    partition path just avoids sorting the whole array when the store is
    large. Boundary ties are resolved explicitly so the selected set
    never depends on partition internals.
    """
    n = len(acc)
    if n <= 1024 or k >= n:
        return np.argsort(acc, kind="stable")[:k]
    part = np.argpartition(acc, k - 1)[:k]
    kth = acc[part].max()
    closer = np.flatnonzero(acc < kth)  # ascending index order
    ties = np.flatnonzero(acc == kth)[: k - len(closer)]
    chosen = np.concatenate([closer, ties])
    # Equal values never straddle the closer/ties boundary and each part
    # is index-ascending, so a stable sort gives (value, index) order.
    return chosen[np.argsort(acc[chosen], kind="stable")]


def retrieval_distribution(
    neighbors: NeighborSet, vocab_size: int
) -> np.ndarray | None:
    """Token distribution induced by a neighbor set.

    p(y) is proportional to the sum of exp(-distance) over every
    neighbor valued y. Distances are shifted by the minimum before
    exponentiation; the shift cancels in the normalization, so the
    result is unchanged mathematically but far neighbors cannot
    underflow the whole vector to zero.

    An empty neighbor set (empty datastore) returns None — the marker
    for "no retrieval evidence"; the combiner then passes the LM
    distribution through untouched.
    """
    if not neighbors.items:
        return None
    nearest = neighbors.items[0].distance
    probs = np.zeros(vocab_size)
    for nb in neighbors.items:
        probs[nb.value] += math.exp(-(nb.distance - nearest))
    probs /= probs.sum()
    return probs
