"""Bit-packed binary code table with exhaustive Hamming-distance queries.

Code bit ``i`` (value +1 -> 1, -1 -> 0) lives in word ``i // 64`` at bit
position ``i % 64``; unused high bits of the last word are always zero.
Results are ordered by (distance, id).
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from fcoh.errors import CheckpointError, ShapeError
from fcoh.model import HashModel, encode

TABLE_MAGIC = b"BCTB"
TABLE_VERSION = 1

_SHIFTS = np.arange(64, dtype=np.uint64)


def n_words(r: int) -> int:
    return (r + 63) // 64


def pack_codes(codes) -> np.ndarray:
    """Pack an r x n matrix of +-1 into an (n, ceil(r/64)) uint64 array."""
    codes = np.asarray(codes)
    if codes.ndim == 1:
        codes = codes.reshape(-1, 1)
    if codes.size and not np.isin(codes, (-1, 1)).all():
        raise ValueError("codes must contain only -1 and +1")
    r, n = codes.shape
    nw = n_words(r)
    bits = np.zeros((n, nw * 64), dtype=np.uint64)
    bits[:, :r] = (codes.T > 0)
    bits = bits.reshape(n, nw, 64) << _SHIFTS
    return np.bitwise_or.reduce(bits, axis=2) if n else np.zeros((0, nw), dtype=np.uint64)


def unpack_codes(words, r: int) -> np.ndarray:
    """Inverse of :func:`pack_codes`: returns an r x n float matrix of +-1."""
    words = np.asarray(words, dtype=np.uint64)
    if words.ndim == 1:
        words = words.reshape(1, -1)
    n = words.shape[0]
    bits = (words[:, :, None] >> _SHIFTS) & np.uint64(1)
    bits = bits.reshape(n, -1)[:, :r]
    return np.where(bits.T == 1, 1.0, -1.0)


def hamming(a, b) -> int:
    a = np.asarray(a, dtype=np.uint64).reshape(-1)
    b = np.asarray(b, dtype=np.uint64).reshape(-1)
    if a.shape != b.shape:
        raise ShapeError(f"packed codes differ in length: {a.shape[0]} vs {b.shape[0]} words")
    return int(np.bitwise_count(a ^ b).sum())


class QueryResult(NamedTuple):
    ids: np.ndarray
    distances: np.ndarray

    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.ids.tolist(), self.distances.tolist()))

    def __len__(self):
        return len(self.ids)


@dataclass(frozen=True)
class BinaryCodeTable:
    r: int
    words: np.ndarray
    ids: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        if self.words.shape != (len(self.ids), n_words(self.r)):
            raise ShapeError(
                f"words shape {self.words.shape} does not fit {len(self.ids)} items of {self.r} bits"
            )
        if self.labels is not None and len(self.labels) != len(self.ids):
            raise ShapeError("labels and ids differ in length")

    def __len__(self):
        return len(self.ids)

    def codes(self) -> np.ndarray:
        return unpack_codes(self.words, self.r)

    def distances(self, q) -> np.ndarray:
        """Hamming distance from packed query ``q`` to every item, in table order."""
        q = np.asarray(q, dtype=np.uint64).reshape(-1)
        if q.shape[0] != self.words.shape[1]:
            raise ShapeError(f"query has {q.shape[0]} words, table uses {self.words.shape[1]}")
        return np.bitwise_count(self.words ^ q).sum(axis=1, dtype=np.int64)

    def ranking(self, q) -> tuple[np.ndarray, np.ndarray]:
        """Row positions sorted by (distance, id) and the matching distances."""
        dist = self.distances(q)
        order = np.lexsort((self.ids, dist))
        return order, dist[order]


def build_table(codes, ids=None, labels=None) -> BinaryCodeTable:
    codes = np.asarray(codes, dtype=np.float64)
    if codes.ndim != 2:
        raise ShapeError(f"codes must be r x n, got shape {codes.shape}")
    r, n = codes.shape
    ids = np.arange(n, dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64)
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
    return BinaryCodeTable(r, pack_codes(codes), ids, labels)


def radius_query(table: BinaryCodeTable, q, radius: int) -> QueryResult:
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    order, dist = table.ranking(q)
    keep = dist <= radius
    return QueryResult(table.ids[order[keep]], dist[keep])


def topk_query(table: BinaryCodeTable, q, k: int) -> QueryResult:
    if k < 1:
        raise ValueError("k must be >= 1")
    order, dist = table.ranking(q)
    return QueryResult(table.ids[order[:k]], dist[:k])


def rebuild(table: BinaryCodeTable | None, model: HashModel, X, ids=None, labels=None) -> BinaryCodeTable:
    """Re-encode every item under the current weights (the old table is left untouched)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != model.d:
        raise ShapeError(f"features of shape {X.shape} do not match model dim {model.d}")
    if ids is None and table is not None and len(table) == X.shape[1]:
        ids = table.ids
    if labels is None and table is not None and len(table) == X.shape[1]:
        labels = table.labels
    return build_table(encode(model, X), ids, labels)


# Table dump (little-endian): "BCTB" | u32 version | u64 r | u64 n |
#   n*words u64 | n i64 ids | u8 has_labels | [n i64 labels]
def save_table(path, table: BinaryCodeTable):
    buf = io.BytesIO()
    buf.write(TABLE_MAGIC)
    buf.write(struct.pack("<IQQ", TABLE_VERSION, table.r, len(table)))
    buf.write(table.words.astype("<u8").tobytes())
    buf.write(table.ids.astype("<i8").tobytes())
    if table.labels is None:
        buf.write(b"\x00")
    else:
        buf.write(b"\x01" + table.labels.astype("<i8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_table(path) -> BinaryCodeTable:
    raw = Path(path).read_bytes()
    if raw[:4] != TABLE_MAGIC:
        raise CheckpointError(f"{path}: not a code table dump")
    if len(raw) < 24:
        raise CheckpointError(f"{path}: truncated header")
    version, r, n = struct.unpack_from("<IQQ", raw, 4)
    if version != TABLE_VERSION:
        raise CheckpointError(f"{path}: unsupported table version {version}")
    nw = n_words(r)
    pos = 24
    need = pos + 8 * n * nw + 8 * n + 1
    if len(raw) < need:
        raise CheckpointError(f"{path}: truncated table")
    words = np.frombuffer(raw, "<u8", n * nw, pos).reshape(n, nw).astype(np.uint64)
    pos += 8 * n * nw
    ids = np.frombuffer(raw, "<i8", n, pos).astype(np.int64)
    pos += 8 * n
    labels = None
    if raw[pos]:
        pos += 1
        if len(raw) < pos + 8 * n:
            raise CheckpointError(f"{path}: truncated labels")
        labels = np.frombuffer(raw, "<i8", n, pos).astype(np.int64)
        pos += 8 * n
    else:
        pos += 1
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes")
    return BinaryCodeTable(int(r), words, ids, labels)
