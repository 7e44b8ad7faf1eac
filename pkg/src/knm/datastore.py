"""Key-value datastores mapping context embeddings to next tokens.

Two build flavors share one file format:

* ``decoupled`` — stores an entry only at positions where the LM's
  argmax prediction misses the actual next token. This is the engine's
  working store: it is small, and the fraction of positions it keeps
  (``err``) doubles as the prior belief that the LM will be wrong at a
  fresh position.
* ``full`` — stores every position, regardless of correctness. Kept for
  baseline comparisons.

Entries preserve corpus order (sequence order, then position). Keys are
held as float32; retrieval widens them to float64 before doing math.
"""

from __future__ import annotations

import random
import struct
import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyCorpus, FormatError, ChecksumError
from .lm import LanguageModel, argmax_token

DECOUPLED = "decoupled"
FULL = "full"

FORMAT_VERSION = 1
_DS_MAGIC = b"KNMDS1"
_DS_HEADER = struct.Struct("<6sIBIQQQ")
_MODE_CODES = {DECOUPLED: 0, FULL: 1}
_MODE_NAMES = {code: name for name, code in _MODE_CODES.items()}

#: Fixed per-file overhead: header plus trailing checksum.
HEADER_BYTES = _DS_HEADER.size
TRAILER_BYTES = 4


@dataclass
class Datastore:
    """Immutable container of (embedding key, token value) entries.

    ``total_tokens`` counts every corpus position seen during the build,
    ``mistake_tokens`` the subset the LM got wrong; for a decoupled
    store the entries are exactly the mistakes, for a full store they
    are everything.
    """

    keys: np.ndarray  # (entry_count, dim) float32
    values: np.ndarray  # (entry_count,) uint32
    total_tokens: int
    mistake_tokens: int
    mode: str = DECOUPLED

    def __post_init__(self) -> None:
        self.keys = np.asarray(self.keys, dtype=np.float32)
        self.values = np.asarray(self.values, dtype=np.uint32)
        if self.keys.ndim != 2:
            raise ValueError(f"keys must be 2-d, got shape {self.keys.shape}")
        if self.keys.shape[1] < 1:
            raise ValueError("key dimension must be >= 1")
        if len(self.keys) != len(self.values):
            raise ValueError(
                f"{len(self.keys)} keys vs {len(self.values)} values"
            )
        if self.mode not in _MODE_CODES:
            raise ValueError(f"unknown datastore mode {self.mode!r}")
        if not 0 <= self.mistake_tokens <= self.total_tokens:
            raise ValueError(
                f"mistake_tokens={self.mistake_tokens} outside [0, {self.total_tokens}]"
            )
        expected = self.mistake_tokens if self.mode == DECOUPLED else self.total_tokens
        if len(self.values) != expected:
            raise ValueError(
                f"{self.mode} store must hold {expected} entries, has {len(self.values)}"
            )

    def __len__(self) -> int:
        return len(self.values)

    @property
    def dim(self) -> int:
        return int(self.keys.shape[1])

    def err(self) -> float:
        """LM argmax error rate on the build corpus — the retrieval prior."""
        if self.total_tokens == 0:
            return 0.0
        return self.mistake_tokens / self.total_tokens


def _build(
    corpus: Sequence[Sequence[int]],
    lm: LanguageModel,
    dim: int,
    mode: str,
) -> Datastore:
    if dim != lm.dim:
        raise DimensionMismatch(
            f"configured dimension {dim} != backend embedding dimension {lm.dim}"
        )
    keys: list[np.ndarray] = []
    values: list[int] = []
    origins: list[tuple[int, int]] = []
    total = 0
    mistakes = 0
    for seq_idx, seq in enumerate(corpus):
        for t, actual in enumerate(seq):
            total += 1
            context = seq[:t]
            wrong = argmax_token(lm.predict(context)) != actual
            if wrong:
                mistakes += 1
            if wrong or mode == FULL:
                keys.append(np.asarray(lm.embed(context), dtype=np.float32))
                values.append(actual)
                origins.append((seq_idx, t))
    if total == 0:
        raise EmptyCorpus("datastore build saw no tokens")
    key_matrix = (
        np.stack(keys).astype(np.float32)
        if keys
        else np.zeros((0, dim), dtype=np.float32)
    )
    store = Datastore(key_matrix, np.asarray(values, dtype=np.uint32), total, mistakes, mode)
    if mode == DECOUPLED and values:
        _self_check(store, corpus, lm, origins)
    return store


def _self_check(
    store: Datastore,
    corpus: Sequence[Sequence[int]],
    lm: LanguageModel,
    origins: list[tuple[int, int]],
) -> None:
    # Spot-check up to 100 entries: a decoupled entry's value must still
    # defeat the LM's argmax when its position is replayed.
    rng = random.Random(0xD5)
    picks = rng.sample(range(len(store)), min(100, len(store)))
    for i in picks:
        seq_idx, t = origins[i]
        predicted = argmax_token(lm.predict(corpus[seq_idx][:t]))
        if predicted == int(store.values[i]):
            raise RuntimeError(
                f"decoupled store self-check failed at entry {i} "
                f"(sequence {seq_idx}, position {t}): backend is not deterministic"
            )


def build_decoupled(
    corpus: Sequence[Sequence[int]], lm: LanguageModel, dim: int | None = None
) -> Datastore:
    """Store (embedding, token) pairs for every position the LM mispredicts."""
    return _build(corpus, lm, lm.dim if dim is None else dim, DECOUPLED)


def build_full(
    corpus: Sequence[Sequence[int]], lm: LanguageModel, dim: int | None = None
) -> Datastore:
    """Store a pair at every position, right or wrong."""
    return _build(corpus, lm, lm.dim if dim is None else dim, FULL)


def serialize(store: Datastore) -> bytes:
    """Datastore bytes: header, packed records, CRC32 of all preceding bytes."""
    header = _DS_HEADER.pack(
        _DS_MAGIC,
        FORMAT_VERSION,
        _MODE_CODES[store.mode],
        store.dim,
        store.total_tokens,
        store.mistake_tokens,
        len(store),
    )
    rec_dtype = np.dtype([("key", "<f4", (store.dim,)), ("value", "<u4")])
    records = np.empty(len(store), dtype=rec_dtype)
    records["key"] = store.keys
    records["value"] = store.values
    body = records.tobytes()
    crc = zlib.crc32(body, zlib.crc32(header))
    return header + body + struct.pack("<I", crc)


def save(store: Datastore, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(store))


def load(path: str) -> Datastore:
    with open(path, "rb") as fh:
        data = fh.read()
    return deserialize(data, name=path)


def deserialize(data: bytes, name: str = "<bytes>") -> Datastore:
    if len(data) < _DS_HEADER.size + TRAILER_BYTES:
        raise FormatError(f"{name}: truncated file ({len(data)} bytes)")
    magic, version, mode_code, dim, total, mistakes, entry_count = _DS_HEADER.unpack_from(
        data, 0
    )
    if magic != _DS_MAGIC:
        raise FormatError(f"{name}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{name}: unsupported version {version}")
    if mode_code not in _MODE_NAMES:
        raise FormatError(f"{name}: unknown mode code {mode_code}")
    if dim < 1:
        raise FormatError(f"{name}: bad dimension {dim}")
    record_size = 4 * dim + 4
    expected = _DS_HEADER.size + entry_count * record_size + TRAILER_BYTES
    if len(data) != expected:
        raise FormatError(
            f"{name}: expected {expected} bytes for {entry_count} entries, got {len(data)}"
        )
    (stated_crc,) = struct.unpack_from("<I", data, len(data) - TRAILER_BYTES)
    actual_crc = zlib.crc32(data[: len(data) - TRAILER_BYTES])
    if stated_crc != actual_crc:
        raise ChecksumError(
            f"{name}: checksum mismatch (stated {stated_crc:#010x}, computed {actual_crc:#010x})"
        )
    rec_dtype = np.dtype([("key", "<f4", (dim,)), ("value", "<u4")])
    records = np.frombuffer(
        data, dtype=rec_dtype, count=entry_count, offset=_DS_HEADER.size
    )
    try:
        return Datastore(
            records["key"].copy(),
            records["value"].copy(),
            total,
            mistakes,
            _MODE_NAMES[mode_code],
        )
    except ValueError as e:
        raise FormatError(f"{name}: inconsistent header: {e}") from e
