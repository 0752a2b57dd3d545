"""Class-wise online hashing learner.

Each incoming batch is split by label. For every class present, the learner
refreshes that class's running center, freezes the current codes of the class
and of everything else in the batch, and takes one SGD step on a loss that is
linear in the projections of the class samples (the other side of each inner
product stays binary). Weights after class ``c`` feed class ``c + 1``.
"""

from __future__ import annotations

import io
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fcoh.errors import CheckpointError, NumericalError, ShapeError
from fcoh.linalg import as_matrix, sgn, sigma, transpose_matmul

CHECKPOINT_MAGIC = b"FCOH"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Hyperparams:
    lambda1: float = 0.1
    lambda2: float = 0.01
    mu: float = 0.01
    n_t: int = 100

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"learning rate mu must be positive, got {self.mu}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1 and lambda2 must be nonnegative")
        if self.n_t < 1:
            raise ValueError(f"batch size n_t must be >= 1, got {self.n_t}")


# Per-dataset settings used in the published benchmarks.
PRESETS = {
    "cifar10": Hyperparams(lambda1=1e-2, lambda2=1e-2, mu=1e-1, n_t=100),
    "places205": Hyperparams(lambda1=1e-1, lambda2=1e-1, mu=1e-4, n_t=1000),
    "mnist": Hyperparams(lambda1=1e-1, lambda2=1e-2, mu=1e-2, n_t=100),
}


@dataclass(frozen=True)
class HashModel:
    W: np.ndarray

    def __post_init__(self):
        W = as_matrix(self.W, "W")
        if not np.isfinite(W).all():
            raise NumericalError("hash weights contain non-finite entries")
        object.__setattr__(self, "W", W)

    @property
    def d(self) -> int:
        return self.W.shape[0]

    @property
    def r(self) -> int:
        return self.W.shape[1]

    def encode(self, X) -> np.ndarray:
        return encode(self, X)


def init_model(d: int, r: int, seed: int) -> HashModel:
    """Draw ``W`` (d x r) i.i.d. standard normal from a seeded PCG64 stream."""
    if d < 1 or r < 1:
        raise ValueError(f"need d >= 1 and r >= 1, got d={d}, r={r}")
    rng = np.random.Generator(np.random.PCG64(seed))
    return HashModel(rng.standard_normal((d, r)))


def encode(model: HashModel, X) -> np.ndarray:
    """Binary codes ``sgn(W^T X)`` as an r x n matrix of +-1."""
    X = as_matrix(X, "X")
    if X.shape[0] != model.d:
        raise ShapeError(f"features have dim {X.shape[0]}, model expects {model.d}")
    return sgn(transpose_matmul(model.W, X))


@dataclass
class StreamBatch:
    X: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.X = as_matrix(self.X, "X")
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.labels.shape[0] != self.X.shape[1]:
            raise ShapeError(
                f"{self.X.shape[1]} samples but {self.labels.shape[0]} labels"
            )
        if (self.labels < 0).any():
            raise ValueError("class labels must be nonnegative")

    @property
    def n(self) -> int:
        return self.X.shape[1]


@dataclass
class ClassRunningStats:
    """Cumulative sample count and running mean for every class seen so far."""

    d: int
    counts: dict[int, int] = field(default_factory=dict)
    centers: dict[int, np.ndarray] = field(default_factory=dict)

    def update(self, c: int, Xc) -> np.ndarray:
        Xc = as_matrix(Xc, "Xc")
        n_c = Xc.shape[1]
        if n_c == 0:
            raise ValueError(f"no samples for class {c}")
        if Xc.shape[0] != self.d:
            raise ShapeError(f"class {c} samples have dim {Xc.shape[0]}, expected {self.d}")
        c = int(c)
        prev_n = self.counts.get(c, 0)
        prev = self.centers.get(c, np.zeros(self.d))
        total = prev_n + n_c
        center = (prev_n * prev + Xc.sum(axis=1)) / total
        self.counts[c] = total
        self.centers[c] = center
        return center

    def center(self, c: int) -> np.ndarray:
        return self.centers[int(c)]

    def copy(self) -> "ClassRunningStats":
        return ClassRunningStats(
            self.d, dict(self.counts), {c: v.copy() for c, v in self.centers.items()}
        )


def update_center(stats: ClassRunningStats, c: int, Xc) -> ClassRunningStats:
    stats.update(c, Xc)
    return stats


@dataclass
class ClassPartition:
    label: int
    X_in: np.ndarray
    X_out: np.ndarray


def partition_by_class(batch: StreamBatch) -> list[ClassPartition]:
    """Split a batch into (class, in-class columns, remaining columns), ascending by label."""
    if batch.n == 0:
        raise ValueError("empty batch")
    parts = []
    for c in np.unique(batch.labels):
        mask = batch.labels == c
        parts.append(ClassPartition(int(c), batch.X[:, mask], batch.X[:, ~mask]))
    return parts


def precompute_codes(model: HashModel, X_in, X_out) -> tuple[np.ndarray, np.ndarray]:
    return encode(model, X_in), encode(model, X_out)


class BlockMeter:
    """Records the size of every pairwise inner-product block a subprocess materializes."""

    def __init__(self):
        self.blocks: list[tuple[str, int, int]] = []

    def record(self, name: str, block: np.ndarray):
        self.blocks.append((name, block.shape[0], block.shape[1]))

    @property
    def peak(self) -> int:
        return max((a * b for _, a, b in self.blocks), default=0)

    def sizes(self, name: str) -> list[int]:
        return [a * b for n, a, b in self.blocks if n == name]

    def reset(self):
        self.blocks.clear()


def _check_class_inputs(model, center, X_in, B_in, B_out):
    center = np.asarray(center, dtype=np.float64).reshape(-1)
    X_in = as_matrix(X_in, "X_in")
    B_in = as_matrix(B_in, "B_in")
    B_out = np.asarray(B_out, dtype=np.float64)
    if B_out.size == 0:
        B_out = B_out.reshape(model.r, 0)
    elif B_out.ndim != 2 or B_out.shape[0] != model.r:
        raise ShapeError(f"B_out has shape {B_out.shape}, expected {model.r} rows")
    if center.shape[0] != model.d or X_in.shape[0] != model.d:
        raise ShapeError("center / class samples do not match model dimension")
    if B_in.shape != (model.r, X_in.shape[1]):
        raise ShapeError(f"B_in has shape {B_in.shape}, expected {(model.r, X_in.shape[1])}")
    return center, X_in, B_in, B_out


def _inner_blocks(model, X_in, B_in, B_out, meter):
    proj = transpose_matmul(model.W, X_in)  # r x n_c
    sim = transpose_matmul(proj, B_in) - model.r  # n_c x n_c
    if meter is not None:
        meter.record("within", sim)
    dis = None
    if B_out.shape[1]:
        dis = transpose_matmul(proj, B_out) + model.r  # n_c x n_cbar
        if meter is not None:
            meter.record("cross", dis)
    return sim, dis


def class_loss(model: HashModel, center, X_in, B_in, B_out, hp: Hyperparams, meter=None) -> float:
    """Center quantization error plus the two frozen-code similarity terms for one class."""
    center, X_in, B_in, B_out = _check_class_inputs(model, center, X_in, B_in, B_out)
    quant = np.abs(np.abs(model.W.T @ center) - 1.0).sum()
    sim, dis = _inner_blocks(model, X_in, B_in, B_out, meter)
    with np.errstate(over="ignore", invalid="ignore"):
        loss = quant + hp.lambda1 * np.sum(sim * sim)
        if dis is not None:
            loss += hp.lambda2 * np.sum(dis * dis)
    return float(loss)


def class_gradient(model: HashModel, center, X_in, B_in, B_out, hp: Hyperparams, meter=None) -> np.ndarray:
    """Gradient of :func:`class_loss` with respect to ``W`` (codes held constant)."""
    center, X_in, B_in, B_out = _check_class_inputs(model, center, X_in, B_in, B_out)
    grad = np.outer(center, sigma(model.W.T @ center))
    sim, dis = _inner_blocks(model, X_in, B_in, B_out, meter)
    grad += 2.0 * hp.lambda1 * (X_in @ sim) @ B_in.T
    if dis is not None:
        grad += 2.0 * hp.lambda2 * (X_in @ dis) @ B_out.T
    return grad


def sgd_step(model: HashModel, grad, mu: float) -> HashModel:
    grad = as_matrix(grad, "grad")
    if grad.shape != model.W.shape:
        raise ShapeError(f"gradient shape {grad.shape} != weight shape {model.W.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        W = model.W - mu * grad
    if not np.isfinite(W).all():
        raise NumericalError("SGD step produced non-finite weights; lower mu")
    return HashModel(W)


@dataclass
class TraceEntry:
    stage: int
    label: int
    loss: float
    seconds: float
    grad_norm: float


def train_batch(
    model: HashModel,
    stats: ClassRunningStats,
    batch: StreamBatch,
    hp: Hyperparams,
    stage: int = 0,
    freeze_per_batch: bool = False,
    meter: BlockMeter | None = None,
) -> tuple[HashModel, ClassRunningStats, list[TraceEntry]]:
    """Run one stage: a center update and an SGD step per class present, ascending by label.

    With ``freeze_per_batch`` the constant codes for every class come from the
    weights at the start of the batch instead of the weights left by the
    previous class step.
    """
    if batch.X.shape[0] != model.d:
        raise ShapeError(f"batch dim {batch.X.shape[0]} != model dim {model.d}")
    start_model = model
    trace = []
    for part in partition_by_class(batch):
        t0 = time.perf_counter()
        center = stats.update(part.label, part.X_in)
        code_model = start_model if freeze_per_batch else model
        B_in, B_out = precompute_codes(code_model, part.X_in, part.X_out)
        loss = class_loss(model, center, part.X_in, B_in, B_out, hp)
        if not np.isfinite(loss):
            raise NumericalError(f"loss diverged at stage {stage}, class {part.label}; lower mu")
        grad = class_gradient(model, center, part.X_in, B_in, B_out, hp, meter=meter)
        model = sgd_step(model, grad, hp.mu)
        trace.append(
            TraceEntry(stage, part.label, loss, time.perf_counter() - t0, float(np.linalg.norm(grad)))
        )
    return model, stats, trace


def storage_saving_rate(n_in: int, n_out: int) -> float:
    """Fraction of the n_t x n_t similarity block avoided by keeping only n_in x n_out."""
    if n_in < 0 or n_out < 0:
        raise ValueError("sample counts must be nonnegative")
    n_t = n_in + n_out
    if n_t == 0:
        raise ValueError("empty batch has no saving rate")
    return 1.0 - (n_in * n_out) / (n_t * n_t)


class OnlineHasher:
    """Stateful wrapper: weights, class statistics and the training trace."""

    def __init__(self, d: int, r: int, hp: Hyperparams | None = None, seed: int = 0,
                 freeze_per_batch: bool = False):
        self.hp = hp or Hyperparams()
        self.model = init_model(d, r, seed)
        self.stats = ClassRunningStats(d)
        self.freeze_per_batch = freeze_per_batch
        self.trace: list[TraceEntry] = []
        self.stage = 0

    def partial_fit(self, X, labels) -> "OnlineHasher":
        batch = StreamBatch(X, labels)
        self.stage += 1
        self.model, self.stats, entries = train_batch(
            self.model, self.stats, batch, self.hp, self.stage, self.freeze_per_batch
        )
        self.trace.extend(entries)
        return self

    def encode(self, X) -> np.ndarray:
        return encode(self.model, X)


# Checkpoint layout (little-endian):
#   "FCOH" | u32 version | u64 d | u64 r | d*r f64 (row-major W)
#   u64 n_classes | n_classes * (i64 label | u64 count | d f64 center)
#   u8 has_offset | [d f64 feature offset]
def save_checkpoint(path, model: HashModel, stats: ClassRunningStats, offset=None):
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<IQQ", CHECKPOINT_VERSION, model.d, model.r))
    buf.write(model.W.astype("<f8").tobytes(order="C"))
    labels = sorted(stats.counts)
    buf.write(struct.pack("<Q", len(labels)))
    for c in labels:
        buf.write(struct.pack("<qQ", c, stats.counts[c]))
        buf.write(stats.centers[c].astype("<f8").tobytes())
    if offset is None:
        buf.write(b"\x00")
    else:
        buf.write(b"\x01")
        buf.write(np.asarray(offset, dtype="<f8").reshape(model.d).tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path):
    """Return ``(model, stats, offset)``; ``offset`` is None unless centering was used."""
    raw = Path(path).read_bytes()
    view = memoryview(raw)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(raw):
            raise CheckpointError(f"{path}: checkpoint truncated at byte {pos}")
        out = view[pos:pos + n]
        pos += n
        return out

    if bytes(take(4)) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not an FCOH checkpoint")
    version, d, r = struct.unpack("<IQQ", take(20))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    if d < 1 or r < 1:
        raise CheckpointError(f"{path}: bad dimensions d={d} r={r}")
    W = np.frombuffer(take(8 * d * r), dtype="<f8").reshape(d, r).astype(np.float64)
    (n_classes,) = struct.unpack("<Q", take(8))
    stats = ClassRunningStats(d)
    for _ in range(n_classes):
        c, count = struct.unpack("<qQ", take(16))
        stats.counts[c] = count
        stats.centers[c] = np.frombuffer(take(8 * d), dtype="<f8").astype(np.float64)
    offset = None
    if take(1)[0]:
        offset = np.frombuffer(take(8 * d), dtype="<f8").astype(np.float64)
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes")
    if not np.isfinite(W).all():
        raise CheckpointError(f"{path}: non-finite weights")
    return HashModel(W), stats, offset
