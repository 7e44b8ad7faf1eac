"""Language-model backends.

Everything downstream treats the LM as a black box exposing exactly two
operations: ``predict`` (next-token distribution over the shared
vocabulary) and ``embed`` (fixed-dimension context vector). Two
implementations live here:

* :class:`NGramLm` — a deterministic add-k smoothed n-gram model with
  backoff, paired with a seeded hashed context embedder. It stands in
  for a pretrained transformer so the whole engine can be exercised
  hermetically.
* :class:`RemoteLm` — a thin JSON-over-HTTP adapter for an external
  model server.

No other module inspects LM internals; the datastore, retrieval, and
combiner layers interact purely through the contract.
"""

from __future__ import annotations

import hashlib
import math
import struct
import threading
from typing import Iterable, Protocol, Sequence, runtime_checkable

import numpy as np
import requests

from .errors import BackendUnavailable, EmptyCorpus, FormatError

#: Number of trailing context tokens that contribute to an embedding.
CONTEXT_WINDOW = 8
#: Per-step weight multiplier for tokens further from the cursor.
POSITION_DECAY = 0.7
#: Default embedding dimension.
DEFAULT_DIM = 64


@runtime_checkable
class LanguageModel(Protocol):
    """Behavioral contract every LM backend satisfies.

    ``predict`` and ``embed`` must be deterministic functions of the
    context for a fixed model state.
    """

    vocab_size: int

    @property
    def dim(self) -> int: ...

    def predict(self, context: Sequence[int]) -> np.ndarray: ...

    def embed(self, context: Sequence[int]) -> np.ndarray: ...


def argmax_token(dist: np.ndarray) -> int:
    """Highest-probability token id; ties break to the lowest id."""
    return int(np.argmax(dist))


class HashedContextEmbedder:
    """Deterministic stand-in for a neural context encoder.

    Each token id is hashed (keyed blake2b, so the seed changes every
    direction) to a pseudo-random direction in R^dim; the embedding of a
    context is the decayed sum of the directions of its last
    ``CONTEXT_WINDOW`` tokens — the final token at full weight, each
    step back multiplied by ``POSITION_DECAY`` — then L2-normalized.
    Contexts sharing a recent suffix therefore land near each other,
    which is the one property retrieval needs.

    The empty context maps to the zero vector, returned unnormalized.
    """

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0):
        if dim < 1:
            raise ValueError(f"embedding dimension must be >= 1, got {dim}")
        self.dim = dim
        self.seed = seed
        self._key = struct.pack("<Q", seed & 0xFFFFFFFFFFFFFFFF)
        self._directions: dict[int, np.ndarray] = {}

    def _direction(self, token: int) -> np.ndarray:
        cached = self._directions.get(token)
        if cached is not None:
            return cached
        # 64-byte digests give 8 uint64 words each; draw as many chunks
        # as the dimension needs. Hash-derived bits, not a stateful RNG,
        # so the mapping is stable across platforms and numpy versions.
        chunks = []
        for chunk in range((self.dim + 7) // 8):
            digest = hashlib.blake2b(
                struct.pack("<qQ", token, chunk),
                digest_size=64,
                key=self._key,
                person=b"ctx-embed",
            ).digest()
            chunks.append(np.frombuffer(digest, dtype="<u8"))
        raw = np.concatenate(chunks)[: self.dim]
        # Top 53 bits -> uniform [0, 1), then stretch to [-1, 1).
        vec = (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53 * 2.0 - 1.0
        vec.flags.writeable = False
        self._directions[token] = vec
        return vec

    def embed(self, context: Sequence[int]) -> np.ndarray:
        if len(context) == 0:
            return np.zeros(self.dim)
        vec = np.zeros(self.dim)
        weight = 1.0
        for tok in reversed(context[-CONTEXT_WINDOW:]):
            vec += weight * self._direction(tok)
            weight *= POSITION_DECAY
        norm = math.sqrt(float(vec @ vec))
        if norm > 0.0:
            vec /= norm
        return vec


class NGramLm:
    """Add-k smoothed n-gram model with backoff.

    ``predict`` uses the longest context level (up to ``order - 1``
    trailing tokens) that was observed during training and applies add-k
    smoothing over the full vocabulary there; unseen contexts back off
    one level at a time down to unigrams. A model that has seen no
    tokens at all returns the uniform distribution.

    Instances also carry a :class:`HashedContextEmbedder` so they
    satisfy the full backend contract.
    """

    def __init__(
        self,
        vocab_size: int,
        order: int = 2,
        smoothing_k: float = 1.0,
        dim: int = DEFAULT_DIM,
        seed: int = 0,
    ):
        if order not in (1, 2, 3):
            raise ValueError(f"order must be 1, 2, or 3, got {order}")
        if not smoothing_k > 0:
            raise ValueError(f"smoothing_k must be > 0, got {smoothing_k}")
        if vocab_size < 1:
            raise ValueError(f"vocab_size must be >= 1, got {vocab_size}")
        self.vocab_size = vocab_size
        self.order = order
        self.smoothing_k = float(smoothing_k)
        self.seed = seed
        self._embedder = HashedContextEmbedder(dim=dim, seed=seed)
        # _counts[g] maps a length-g context tuple to {next_token: count}.
        self._counts: list[dict[tuple[int, ...], dict[int, int]]] = [
            {} for _ in range(order)
        ]

    @property
    def dim(self) -> int:
        return self._embedder.dim

    def observe(self, sequence: Sequence[int]) -> None:
        """Accumulate counts for one token sequence."""
        for t, tok in enumerate(sequence):
            for g in range(self.order):
                if t < g:
                    continue
                ctx = tuple(sequence[t - g : t])
                succ = self._counts[g].setdefault(ctx, {})
                succ[tok] = succ.get(tok, 0) + 1

    def predict(self, context: Sequence[int]) -> np.ndarray:
        k = self.smoothing_k
        v = self.vocab_size
        for g in range(self.order - 1, -1, -1):
            ctx = tuple(context[len(context) - g :]) if g else ()
            succ = self._counts[g].get(ctx)
            if succ is None:
                continue
            probs = np.full(v, k)
            for tok, cnt in succ.items():
                probs[tok] += cnt
            probs /= probs.sum()
            return probs
        return np.full(v, 1.0 / v)

    def embed(self, context: Sequence[int]) -> np.ndarray:
        return self._embedder.embed(context)


def train_reference_lm(
    corpus: Iterable[Sequence[int]],
    order: int,
    smoothing_k: float,
    *,
    vocab_size: int,
    dim: int = DEFAULT_DIM,
    seed: int = 0,
) -> NGramLm:
    """Train an :class:`NGramLm` on encoded token sequences.

    Raises :class:`EmptyCorpus` when the corpus holds no tokens at all
    (an untrained model can still be constructed directly; it predicts
    the uniform distribution).
    """
    lm = NGramLm(vocab_size, order=order, smoothing_k=smoothing_k, dim=dim, seed=seed)
    total = 0
    for seq in corpus:
        total += len(seq)
        lm.observe(seq)
    if total == 0:
        raise EmptyCorpus("reference LM training needs at least one token")
    return lm


def perplexity(lm: LanguageModel, sequences: Iterable[Sequence[int]]) -> float:
    """exp of the mean negative log-likelihood over every position."""
    nll = 0.0
    count = 0
    for seq in sequences:
        for t, tok in enumerate(seq):
            probs = lm.predict(seq[:t])
            nll -= math.log(float(probs[tok]))
            count += 1
    if count == 0:
        raise EmptyCorpus("perplexity needs at least one token")
    return math.exp(nll / count)


# ---------------------------------------------------------------------------
# Reference-LM persistence
# ---------------------------------------------------------------------------

_LM_MAGIC = b"KNMLM1"
_LM_HEADER = struct.Struct("<6sIdIIQ")  # magic, order, smoothing_k, vocab, dim, seed
_U64 = struct.Struct("<Q")
_U32 = struct.Struct("<I")
_PAIR = struct.Struct("<IQ")  # token, count


def save_reference_lm(lm: NGramLm, path: str) -> None:
    """Persist count tables in a versioned little-endian binary layout.

    Contexts and successors are written in sorted order, so the file is
    byte-identical no matter how the counts were accumulated.
    """
    with open(path, "wb") as fh:
        fh.write(
            _LM_HEADER.pack(
                _LM_MAGIC, lm.order, lm.smoothing_k, lm.vocab_size, lm.dim, lm.seed
            )
        )
        for g in range(lm.order):
            table = lm._counts[g]
            fh.write(_U64.pack(len(table)))
            for ctx in sorted(table):
                if g:
                    fh.write(struct.pack(f"<{g}I", *ctx))
                succ = table[ctx]
                fh.write(_U32.pack(len(succ)))
                for tok in sorted(succ):
                    fh.write(_PAIR.pack(tok, succ[tok]))


def load_reference_lm(path: str) -> NGramLm:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _LM_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, order, smoothing_k, vocab_size, dim, seed = _LM_HEADER.unpack_from(data, 0)
    if magic != _LM_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    try:
        lm = NGramLm(vocab_size, order=order, smoothing_k=smoothing_k, dim=dim, seed=seed)
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from e
    offset = _LM_HEADER.size
    try:
        for g in range(order):
            (n_contexts,) = _U64.unpack_from(data, offset)
            offset += _U64.size
            ctx_struct = struct.Struct(f"<{g}I") if g else None
            for _ in range(n_contexts):
                if ctx_struct is not None:
                    ctx = ctx_struct.unpack_from(data, offset)
                    offset += ctx_struct.size
                else:
                    ctx = ()
                (n_succ,) = _U32.unpack_from(data, offset)
                offset += _U32.size
                succ: dict[int, int] = {}
                for _ in range(n_succ):
                    tok, cnt = _PAIR.unpack_from(data, offset)
                    offset += _PAIR.size
                    succ[tok] = cnt
                lm._counts[g][ctx] = succ
    except struct.error as e:
        raise FormatError(f"{path}: truncated count tables: {e}") from e
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes")
    return lm


# ---------------------------------------------------------------------------
# Remote backend
# ---------------------------------------------------------------------------


class RemoteLm:
    """Adapter for a model served over HTTP.

    Protocol: ``POST {base_url}/v1/next_token`` with ``{"tokens": [...]}``
    returns ``{"probs": [...]}`` over the full vocabulary, and
    ``POST {base_url}/v1/embed`` returns ``{"vec": [...]}`` of length
    ``dim``. Any transport failure or malformed payload raises
    :class:`BackendUnavailable`; callers must surface that rather than
    silently substituting a fallback distribution.

    At most ``max_in_flight`` requests are issued concurrently.
    """

    def __init__(
        self,
        base_url: str,
        vocab_size: int,
        dim: int = DEFAULT_DIM,
        timeout: float = 10.0,
        max_in_flight: int = 8,
    ):
        self.base_url = base_url.rstrip("/")
        self.vocab_size = vocab_size
        self._dim = dim
        self.timeout = timeout
        self._gate = threading.BoundedSemaphore(max_in_flight)
        self._session = requests.Session()

    @property
    def dim(self) -> int:
        return self._dim

    def _post(self, endpoint: str, payload: dict) -> dict:
        url = self.base_url + endpoint
        try:
            with self._gate:
                resp = self._session.post(url, json=payload, timeout=self.timeout)
        except requests.RequestException as e:
            raise BackendUnavailable(f"{url}: {e}") from e
        if resp.status_code != 200:
            raise BackendUnavailable(f"{url}: HTTP {resp.status_code}")
        try:
            body = resp.json()
        except ValueError as e:
            raise BackendUnavailable(f"{url}: response is not JSON") from e
        if not isinstance(body, dict):
            raise BackendUnavailable(f"{url}: response is not a JSON object")
        return body

    def _vector(self, body: dict, field: str, expected_len: int, endpoint: str) -> np.ndarray:
        if field not in body:
            raise BackendUnavailable(f"{endpoint}: response missing {field!r}")
        try:
            vec = np.asarray(body[field], dtype=np.float64)
        except (TypeError, ValueError) as e:
            raise BackendUnavailable(f"{endpoint}: bad {field!r} payload: {e}") from e
        if vec.ndim != 1 or vec.size != expected_len:
            raise BackendUnavailable(
                f"{endpoint}: {field!r} has shape {vec.shape}, expected ({expected_len},)"
            )
        return vec

    def predict(self, context: Sequence[int]) -> np.ndarray:
        body = self._post("/v1/next_token", {"tokens": [int(t) for t in context]})
        probs = self._vector(body, "probs", self.vocab_size, "/v1/next_token")
        if np.any(probs < 0.0):
            raise BackendUnavailable("/v1/next_token: negative probabilities")
        total = float(probs.sum())
        if not math.isfinite(total) or total <= 0.0:
            raise BackendUnavailable(
                f"/v1/next_token: probabilities sum to {total}, cannot normalize"
            )
        return probs / total

    def embed(self, context: Sequence[int]) -> np.ndarray:
        body = self._post("/v1/embed", {"tokens": [int(t) for t in context]})
        vec = self._vector(body, "vec", self._dim, "/v1/embed")
        if not np.all(np.isfinite(vec)):
            raise BackendUnavailable("/v1/embed: non-finite embedding")
        return vec
