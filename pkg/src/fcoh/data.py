"""Feature files, dataset splits, synthetic clusters and the batch stream.

Binary feature file (``.fvec``), little-endian::

    "FVEC" | u32 version | u64 n | u64 d | n*d f32 (sample by sample) | n i32 labels

CSV: one sample per line, ``d`` floats followed by an integer label, no header.

All randomness goes through ``numpy.random.Generator(PCG64(seed))``.
"""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from fcoh.errors import (
    BadMagicError,
    CountMismatchError,
    DataError,
    InfeasibleSplitError,
    NonFiniteFeatureError,
    TruncatedFileError,
)
from fcoh.model import StreamBatch

FVEC_MAGIC = b"FVEC"
FVEC_VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass
class Dataset:
    features: np.ndarray  # d x n, one sample per column
    labels: np.ndarray
    name: str = ""
    ids: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise DataError(f"features must be d x n, got shape {self.features.shape}")
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.labels.shape[0] != self.features.shape[1]:
            raise CountMismatchError(
                f"{self.features.shape[1]} samples but {self.labels.shape[0]} labels"
            )
        if not np.isfinite(self.features).all():
            raise NonFiniteFeatureError(f"{self.name or 'dataset'}: NaN or Inf in features")
        if (self.labels < 0).any():
            raise DataError("labels must be nonnegative")
        if self.ids is None:
            self.ids = np.arange(self.n, dtype=np.int64)
        else:
            self.ids = np.asarray(self.ids, dtype=np.int64)

    @property
    def d(self) -> int:
        return self.features.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[1]

    def subset(self, idx, name: str | None = None) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[:, idx], self.labels[idx], name or self.name, self.ids[idx])


def write_fvec(path, ds: Dataset):
    with open(path, "wb") as f:
        f.write(_HEADER.pack(FVEC_MAGIC, FVEC_VERSION, ds.n, ds.d))
        f.write(np.ascontiguousarray(ds.features.T, dtype="<f4").tobytes())
        f.write(ds.labels.astype("<i4").tobytes())


def read_fvec(path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != FVEC_MAGIC:
        raise BadMagicError(f"{path}: missing FVEC magic")
    if len(raw) < _HEADER.size:
        raise TruncatedFileError(f"{path}: header truncated")
    _, version, n, d = _HEADER.unpack_from(raw)
    if version != FVEC_VERSION:
        raise DataError(f"{path}: unsupported FVEC version {version}")
    expected = _HEADER.size + 4 * n * d + 4 * n
    if len(raw) < expected:
        raise TruncatedFileError(f"{path}: expected {expected} bytes, found {len(raw)}")
    if len(raw) > expected:
        raise CountMismatchError(
            f"{path}: {len(raw) - expected} bytes beyond the {n} samples declared in the header"
        )
    feats = np.frombuffer(raw, "<f4", n * d, _HEADER.size).reshape(n, d)
    labels = np.frombuffer(raw, "<i4", n, _HEADER.size + 4 * n * d)
    return Dataset(feats.T.astype(np.float64), labels.astype(np.int64), Path(path).stem)


def write_csv(path, ds: Dataset):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        for j in range(ds.n):
            w.writerow([repr(float(v)) for v in ds.features[:, j]] + [int(ds.labels[j])])


def read_csv(path) -> Dataset:
    rows = []
    with open(path, newline="") as f:
        for lineno, row in enumerate(csv.reader(f), 1):
            if not row:
                continue
            if rows and len(row) != len(rows[0]):
                raise CountMismatchError(f"{path}:{lineno}: expected {len(rows[0])} fields, got {len(row)}")
            rows.append(row)
    if not rows:
        raise DataError(f"{path}: no samples")
    if len(rows[0]) < 2:
        raise DataError(f"{path}: each row needs features and a label")
    try:
        feats = np.array([[float(v) for v in row[:-1]] for row in rows])
        labels = np.array([int(row[-1]) for row in rows])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    # Match the binary format, which stores features as f32.
    return Dataset(feats.astype(np.float32).T.astype(np.float64), labels, Path(path).stem)


def load_features(path, format: str | None = None) -> Dataset:
    """Load a dataset; ``format`` is ``"fvec"`` or ``"csv"`` (guessed from the suffix if omitted)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    fmt = format or ("csv" if path.suffix.lower() == ".csv" else "fvec")
    if fmt == "fvec":
        return read_fvec(path)
    if fmt == "csv":
        return read_csv(path)
    raise DataError(f"unknown feature format {fmt!r}")


def save_features(path, ds: Dataset, format: str | None = None):
    fmt = format or ("csv" if Path(path).suffix.lower() == ".csv" else "fvec")
    (write_csv if fmt == "csv" else write_fvec)(path, ds)


def _read_idx(path) -> np.ndarray:
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0 or raw[2] != 0x08:
        raise BadMagicError(f"{path}: not an unsigned-byte IDX file")
    ndim = raw[3]
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    count = int(np.prod(dims))
    if len(raw) < 4 + 4 * ndim + count:
        raise TruncatedFileError(f"{path}: IDX payload truncated")
    return np.frombuffer(raw, np.uint8, count, 4 + 4 * ndim).reshape(dims)


def load_mnist_idx(images_path, labels_path) -> Dataset:
    """Read an MNIST image/label IDX pair as 784-dim pixels scaled to [0, 1]."""
    images = _read_idx(images_path)
    labels = _read_idx(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    feats = images.reshape(images.shape[0], -1).T.astype(np.float64) / 255.0
    return Dataset(feats, labels.astype(np.int64), "mnist")


def l2_normalize(ds: Dataset) -> Dataset:
    """Scale every sample to unit Euclidean norm (all-zero samples are left as is)."""
    norms = np.linalg.norm(ds.features, axis=0)
    return Dataset(ds.features / np.where(norms > 0, norms, 1.0), ds.labels, ds.name, ds.ids)


def concat(*parts: Dataset, name: str = "") -> Dataset:
    return Dataset(
        np.concatenate([p.features for p in parts], axis=1),
        np.concatenate([p.labels for p in parts]),
        name,
    )


@dataclass
class Splits:
    retrieval: Dataset
    queries: Dataset
    train: Dataset
    database: Dataset | None = None

    def __post_init__(self):
        if self.database is None:
            self.database = self.retrieval


def make_splits(ds: Dataset, seed: int, *, query_per_class: int | None = None,
                query_total: int | None = None, train_size: int,
                database_size: int | None = None) -> Splits:
    """Hold out queries (per class or in total), keep the rest as the retrieval set,
    and draw the training stream from the retrieval set.

    ``database_size`` optionally indexes only a random subset of the retrieval
    set at evaluation time; by default the whole retrieval set is indexed.
    """
    if (query_per_class is None) == (query_total is None):
        raise InfeasibleSplitError("give exactly one of query_per_class or query_total")
    rng = rng_for(seed)
    if query_per_class is not None:
        q_idx = []
        for c in np.unique(ds.labels):
            members = np.flatnonzero(ds.labels == c)
            if len(members) <= query_per_class:
                raise InfeasibleSplitError(
                    f"class {c} has {len(members)} samples, cannot hold out {query_per_class} queries"
                )
            q_idx.append(rng.choice(members, query_per_class, replace=False))
        q_idx = np.sort(np.concatenate(q_idx))
    else:
        if not 0 < query_total < ds.n:
            raise InfeasibleSplitError(f"cannot hold out {query_total} of {ds.n} samples")
        q_idx = np.sort(rng.choice(ds.n, query_total, replace=False))
    mask = np.ones(ds.n, dtype=bool)
    mask[q_idx] = False
    r_idx = np.flatnonzero(mask)
    if not 0 < train_size <= len(r_idx):
        raise InfeasibleSplitError(f"train_size {train_size} not in 1..{len(r_idx)}")
    t_idx = np.sort(rng.choice(r_idx, train_size, replace=False))
    db = None
    if database_size is not None:
        if not 0 < database_size <= len(r_idx):
            raise InfeasibleSplitError(f"database_size {database_size} not in 1..{len(r_idx)}")
        db = ds.subset(np.sort(rng.choice(r_idx, database_size, replace=False)), "database")
    return Splits(ds.subset(r_idx, "retrieval"), ds.subset(q_idx, "queries"), ds.subset(t_idx, "train"), db)


def synth_clusters(d: int, n_classes: int, per_class: int, sep: float, noise: float, seed: int) -> Dataset:
    """Isotropic Gaussian blobs whose closest pair of means is exactly ``sep`` apart."""
    if min(d, n_classes, per_class) < 1 or sep <= 0 or noise < 0:
        raise ValueError("d, n_classes, per_class and sep must be positive; noise nonnegative")
    rng = rng_for(seed)
    means = rng.standard_normal((n_classes, d))
    if n_classes > 1:
        gaps = np.linalg.norm(means[:, None, :] - means[None, :, :], axis=2)
        means *= sep / gaps[np.triu_indices(n_classes, 1)].min()
    labels = np.repeat(np.arange(n_classes), per_class)
    feats = means[labels].T + noise * rng.standard_normal((d, labels.size))
    return Dataset(feats, labels, "synth")


@dataclass(frozen=True)
class StreamSpec:
    n_t: int
    total: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_t < 1:
            raise ValueError("n_t must be >= 1")
        if self.total is not None and self.total < 1:
            raise ValueError("total must be >= 1")


class BatchStream:
    """Single pass over a shuffled training set in chunks of ``n_t``.

    With ``center=True`` the per-dimension mean of the first batch is
    subtracted from every batch; it is exposed as :attr:`offset` so the same
    shift can be applied to database and query features.
    """

    def __init__(self, train: Dataset, spec: StreamSpec, center: bool = False):
        total = train.n if spec.total is None else min(spec.total, train.n)
        self.order = rng_for(spec.seed).permutation(train.n)[:total]
        self.train = train
        self.spec = spec
        self.center = center
        self.offset: np.ndarray | None = None

    def __len__(self):
        return -(-len(self.order) // self.spec.n_t)

    def __iter__(self) -> Iterator[StreamBatch]:
        n_t = self.spec.n_t
        for start in range(0, len(self.order), n_t):
            idx = self.order[start:start + n_t]
            X = self.train.features[:, idx]
            if self.center:
                if self.offset is None:
                    self.offset = X.mean(axis=1)
                X = X - self.offset[:, None]
            yield StreamBatch(X, self.train.labels[idx])


def stream(train: Dataset, spec: StreamSpec, center: bool = False) -> BatchStream:
    return BatchStream(train, spec, center)
