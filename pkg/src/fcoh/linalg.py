"""Dense float64 matrix kernel used by the learner.

Thin validated wrappers over numpy: every function checks shapes up front,
returns a fresh C-contiguous float64 array and refuses to hand back NaN/Inf.
"""

from __future__ import annotations

import numpy as np

from fcoh.errors import NumericalError, ShapeError


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce ``a`` to a finite 2-D float64 array (1-D becomes a column)."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def _finite(m: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(m).all():
        raise NumericalError(f"{op} produced non-finite entries")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.ascontiguousarray(a @ b)
    return _finite(out, "matmul")


def transpose(a) -> np.ndarray:
    # A strided view: matmul on it takes the same BLAS path as transpose_matmul.
    return as_matrix(a, "a").T


def transpose_matmul(a, b) -> np.ndarray:
    """Return ``a.T @ b`` using a transposed view instead of a copy of ``a``."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"transpose_matmul: row counts differ, {a.shape} vs {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.ascontiguousarray(a.T @ b)
    return _finite(out, "transpose_matmul")


def sgn(m) -> np.ndarray:
    """Entrywise sign into {-1, +1}; zero maps to +1."""
    m = np.asarray(m, dtype=np.float64)
    return np.where(m >= 0.0, 1.0, -1.0)


def sigma(m) -> np.ndarray:
    """Subgradient of ``||x| - 1|``.

    +1 on ``x > 1`` and ``-1 < x < 0``, -1 elsewhere. The kinks at -1, 0 and 1
    fall into the -1 branch.
    """
    m = np.asarray(m, dtype=np.float64)
    up = (m > 1.0) | ((m > -1.0) & (m < 0.0))
    return np.where(up, 1.0, -1.0)
