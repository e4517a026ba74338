"""Dense float64 matrix helpers used by every other module.

Matrices are plain 2-D ``numpy.ndarray`` objects with ``dtype=float64`` in
C (row-major) order. The functions here validate shapes and raise
:class:`~maresu.errors.ShapeError` with both operand shapes on mismatch,
which numpy's own messages do not always make obvious.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError, ShapeError

DEFAULT_EPS = 1e-12


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Return ``x`` as a C-contiguous 2-D float64 array.

    Raises ShapeError for anything that is not two-dimensional or has an
    empty axis.
    """
    m = np.ascontiguousarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"{name} must have at least one row and column, got {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return a @ b


def transpose(m) -> np.ndarray:
    """Materialized transpose (a new row-major array, not a view)."""
    return np.ascontiguousarray(as_matrix(m).T)


def row_softmax(m, out: np.ndarray | None = None) -> np.ndarray:
    """Softmax along each row, with per-row max subtraction.

    ``out`` may alias ``m`` (pass the same float64 array) to evaluate in
    place; the attention benchmark relies on this to keep a single N x N
    buffer alive.
    """
    m = as_matrix(m)
    if out is None:
        out = np.empty_like(m)
    np.subtract(m, m.max(axis=1, keepdims=True), out=out)
    np.exp(out, out=out)
    out /= out.sum(axis=1, keepdims=True)
    return out


def row_norms(m) -> np.ndarray:
    """Euclidean norm of each row, shape ``(rows, 1)``."""
    m = as_matrix(m)
    return np.sqrt(np.einsum("ij,ij->i", m, m))[:, None]


def l2_normalize_rows(m, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Divide every row by ``max(||row||_2, eps)``.

    Zero rows stay zero.
    """
    if not eps > 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    m = as_matrix(m)
    return m / np.maximum(row_norms(m), eps)


class Rng:
    """Seeded random stream backed by numpy's PCG64 generator.

    Two instances built from the same seed yield identical streams. The
    stream is stateful, so keep each instance confined to one caller.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed})"


def seeded_fill(rng: Rng, rows: int, cols: int, lo: float = -1.0, hi: float = 1.0) -> np.ndarray:
    """A ``rows x cols`` matrix with entries drawn uniformly from ``[lo, hi)``."""
    if not lo < hi:
        raise ParameterError(f"need lo < hi, got lo={lo}, hi={hi}")
    if rows < 1 or cols < 1:
        raise ParameterError(f"rows and cols must be positive, got {rows}x{cols}")
    m = rng.generator.uniform(lo, hi, size=(rows, cols))
    # uniform() can round up to ``hi`` for some (lo, hi) pairs
    np.minimum(m, np.nextafter(hi, lo), out=m)
    return m
