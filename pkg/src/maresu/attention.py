"""Softmax, kernelized, and linear (Taylor/L2) attention on dense matrices.

All inputs are row-per-position matrices: ``q`` and ``k`` are ``n x d_k``,
``v`` is ``n x d_v``. Every function returns a fresh ``n x d_v`` array.

Three evaluation routes exist for the linear attention mechanism (LAM) and
they are intentionally independent of each other:

* :func:`generalized_attention_direct` materializes the ``n x n``
  similarity matrix and is the O(n^2) oracle for any kernel;
* :func:`linear_attention_rowwise` evaluates the factored form one query
  at a time, accumulating the key summaries with explicit loops;
* :func:`linear_attention_vectorized` is the production O(n) path.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import memtrack
from .errors import ParameterError, ShapeError
from .numerics import DEFAULT_EPS, as_matrix, l2_normalize_rows, row_softmax


@dataclass(frozen=True)
class AttentionDims:
    """Problem size of one attention call.

    ``n`` is the number of positions (``h * w`` for feature maps), ``c``
    the input channel count, ``d_k``/``d_v`` the key and value widths.
    ``h`` and ``w`` are 0 for non-spatial inputs.
    """

    n: int
    c: int
    d_k: int
    d_v: int
    h: int = 0
    w: int = 0

    def __post_init__(self):
        for name in ("n", "c", "d_k", "d_v"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.h < 0 or self.w < 0:
            raise ParameterError(f"h and w must be non-negative, got {self.h}x{self.w}")
        if self.h * self.w > 0 and self.n != self.h * self.w:
            raise ParameterError(f"n={self.n} does not match h*w={self.h * self.w}")

    @classmethod
    def spatial(cls, h: int, w: int, c: int, d_k: int, d_v: int) -> "AttentionDims":
        return cls(n=h * w, c=c, d_k=d_k, d_v=d_v, h=h, w=w)


@dataclass(frozen=True)
class ProjectionWeights:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray

    def __post_init__(self):
        for name in ("w_q", "w_k", "w_v"):
            object.__setattr__(self, name, as_matrix(getattr(self, name), name))
        if self.w_q.shape != self.w_k.shape:
            raise ShapeError(f"w_q {self.w_q.shape} and w_k {self.w_k.shape} must match")
        if self.w_v.shape[0] != self.w_q.shape[0]:
            raise ShapeError(
                f"w_v has {self.w_v.shape[0]} input rows, w_q has {self.w_q.shape[0]}"
            )

    @property
    def c(self) -> int:
        return self.w_q.shape[0]

    @property
    def d_k(self) -> int:
        return self.w_q.shape[1]

    @property
    def d_v(self) -> int:
        return self.w_v.shape[1]


@dataclass(frozen=True)
class AttentionBlockParams:
    """Parameters of one attention block (positional LAM branch + channel branch).

    Both branch weights start at zero in a freshly built network, which
    makes the block an identity skip connection until trained.
    """

    proj: ProjectionWeights
    gamma_p: float = 0.0
    gamma_c: float = 0.0
    eps: float = DEFAULT_EPS


class KernelChoice(enum.Enum):
    """Similarity kernel for :func:`generalized_attention_direct`."""

    EXP_EXACT = "exp"
    TAYLOR_L2 = "taylor_l2"

    def similarity(self, q: np.ndarray, k: np.ndarray) -> np.ndarray:
        """Full ``n_q x n_k`` matrix of ``sim(q_i, k_j)``."""
        if self is KernelChoice.EXP_EXACT:
            return np.exp(q @ k.T)
        qn = np.linalg.norm(q, axis=1, keepdims=True)
        kn = np.linalg.norm(k, axis=1, keepdims=True)
        qh = q / np.maximum(qn, DEFAULT_EPS)
        kh = k / np.maximum(kn, DEFAULT_EPS)
        # cosines can overshoot -1 by an ulp
        return np.maximum(1.0 + qh @ kh.T, 0.0)


class FlopMethod(enum.Enum):
    SOFTMAX = "softmax"
    LAM = "lam"
    CHANNEL = "channel"


def _check_qkv(q, k, v):
    q = as_matrix(q, "q")
    k = as_matrix(k, "k")
    v = as_matrix(v, "v")
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"q is {q.shape} and k is {k.shape}: query and key widths differ")
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"k is {k.shape} and v is {v.shape}: key and value counts differ")
    return q, k, v


def project_qkv(x, p: ProjectionWeights):
    """Project ``x`` (n x c) into query, key and value matrices."""
    x = as_matrix(x, "x")
    if x.shape[1] != p.c:
        raise ShapeError(f"x is {x.shape} but projections expect {p.c} input channels")
    return x @ p.w_q, x @ p.w_k, x @ p.w_v


def softmax_attention(q, k, v) -> np.ndarray:
    """Exact dot-product attention ``row_softmax(q k^T) v``.

    No ``1/sqrt(d_k)`` temperature is applied. The ``n x n`` score matrix
    is the only quadratic buffer; it is exponentiated in place after per-row
    max subtraction, and a ones column appended to ``v`` makes the final
    product return the softmax row sums alongside the numerator, so the
    normalization divides the ``n x d_v`` output instead of the scores.
    """
    q, k, v = _check_qkv(q, k, v)
    scores = memtrack.note("scores", q @ k.T)
    np.subtract(scores, scores.max(axis=1, keepdims=True), out=scores)
    np.exp(scores, out=scores)
    v1 = memtrack.note("v_ones", np.hstack([v, np.ones((v.shape[0], 1))]), per_row=True)
    out = scores @ v1
    del scores
    return out[:, :-1] / out[:, -1:]


def attention_weights(q, k, kernel: KernelChoice) -> np.ndarray:
    """Row-normalized attention weight matrix for ``kernel`` (O(n^2))."""
    q = as_matrix(q, "q")
    k = as_matrix(k, "k")
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"q is {q.shape} and k is {k.shape}: query and key widths differ")
    sim = kernel.similarity(q, k)
    return sim / sim.sum(axis=1, keepdims=True)


def generalized_attention_direct(
    q, k, v, kernel: KernelChoice, eps: float = DEFAULT_EPS, guard: bool = True
) -> np.ndarray:
    """Similarity-weighted average of values with an explicit ``n x n`` matrix.

    ``guard=False`` drops the ``max(den, eps)`` clamp; it exists only to
    demonstrate that the verification suite catches an unguarded build.
    """
    q, k, v = _check_qkv(q, k, v)
    sim = memtrack.note("similarity", kernel.similarity(q, k))
    den = sim.sum(axis=1, keepdims=True)
    if guard:
        den = np.maximum(den, eps)
    return (sim @ v) / den


def _unit(row: np.ndarray, eps: float) -> np.ndarray:
    return row / max(math.sqrt(math.fsum(float(t) * float(t) for t in row)), eps)


def linear_attention_rowwise(q, k, v, eps: float = DEFAULT_EPS, guard: bool = True) -> np.ndarray:
    """Reference LAM: key summaries by explicit accumulation, then one query at a time."""
    q, k, v = _check_qkv(q, k, v)
    n, d_k = k.shape
    d_v = v.shape[1]
    v_sum = np.zeros(d_v)
    k_sum = np.zeros(d_k)
    kv_sum = np.zeros((d_k, d_v))
    for j in range(n):
        kj = _unit(k[j], eps)
        v_sum += v[j]
        k_sum += kj
        kv_sum += np.outer(kj, v[j])
    out = np.empty((q.shape[0], d_v))
    for i in range(q.shape[0]):
        qi = _unit(q[i], eps)
        num = v_sum + qi @ kv_sum
        den = n + float(qi @ k_sum)
        if guard:
            den = max(den, eps)
        out[i] = num / den
    return out


def linear_attention_vectorized(q, k, v, eps: float = DEFAULT_EPS, guard: bool = True) -> np.ndarray:
    """O(n) LAM.

    The key-side summaries ``K^T V`` (d_k x d_v), ``K^T 1`` and ``V^T 1``
    are computed once and reused by every query, so no buffer larger than
    ``max(n * max(d_k, d_v), d_k * d_v)`` floats is ever allocated.
    """
    q, k, v = _check_qkv(q, k, v)
    n = k.shape[0]
    qh = memtrack.note("q_hat", l2_normalize_rows(q, eps), per_row=True)
    kh = memtrack.note("k_hat", l2_normalize_rows(k, eps), per_row=True)
    kv = memtrack.note("kT_v", kh.T @ v)
    k_sum = memtrack.note("k_sum", kh.sum(axis=0))
    v_sum = memtrack.note("v_sum", v.sum(axis=0))
    del kh
    out = memtrack.note("numerator", qh @ kv, per_row=True)
    out += v_sum
    den = memtrack.note("denominator", qh @ k_sum, per_row=True)
    den += n
    if guard:
        np.maximum(den, eps, out=den)
    out /= den[:, None]
    return out


def taylor_feature_map(x, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Map rows to ``[x / ||x||, 1]`` so that ``phi(q) . phi(k) = 1 + cos(q, k)``."""
    x = as_matrix(x)
    return np.hstack([l2_normalize_rows(x, eps), np.ones((x.shape[0], 1))])


def kernelized_attention(
    q,
    k,
    v,
    feature_map: Callable[[np.ndarray], np.ndarray],
    key_feature_map: Callable[[np.ndarray], np.ndarray] | None = None,
    eps: float = DEFAULT_EPS,
) -> np.ndarray:
    """Factored O(n) attention for any non-negative feature-map kernel.

    Evaluates ``phi(q_i)^T sum_j psi(k_j) v_j^T / phi(q_i)^T sum_j psi(k_j)``.
    ``key_feature_map`` defaults to ``feature_map``.
    """
    q, k, v = _check_qkv(q, k, v)
    psi = key_feature_map or feature_map
    phi_q = as_matrix(feature_map(q), "phi(q)")
    phi_k = as_matrix(psi(k), "psi(k)")
    if phi_q.shape[1] != phi_k.shape[1]:
        raise ShapeError(f"feature maps disagree: {phi_q.shape} vs {phi_k.shape}")
    num = phi_q @ (phi_k.T @ v)
    den = np.maximum(phi_q @ phi_k.sum(axis=0), eps)
    return num / den[:, None]


def channel_attention_map(x) -> np.ndarray:
    """The ``c x c`` row-stochastic channel affinity ``row_softmax(x^T x)``."""
    x = as_matrix(x, "x")
    gram = memtrack.note("channel_gram", x.T @ x)
    return row_softmax(gram, out=gram)


def channel_attention(x) -> np.ndarray:
    """Dot-product attention across channels; cost O(n c^2)."""
    x = as_matrix(x, "x")
    a = channel_attention_map(x)
    return memtrack.note("channel_out", x @ a.T, per_row=True)


def attention_block_forward(x, params: AttentionBlockParams) -> np.ndarray:
    """``x + gamma_p * LAM(project(x)) + gamma_c * channel_attention(x)``."""
    x = as_matrix(x, "x")
    proj = params.proj
    if proj.d_v != x.shape[1]:
        raise ShapeError(
            f"value width {proj.d_v} must equal input channels {x.shape[1]} to add the residual"
        )
    q, k, v = project_qkv(x, proj)
    out = x + params.gamma_p * linear_attention_vectorized(q, k, v, params.eps)
    out += params.gamma_c * channel_attention(x)
    return out


def flop_count(method: FlopMethod | str, dims: AttentionDims) -> int:
    """Closed-form operation count; multiply and add count 1 each.

    softmax: ``2 n^2 d_k + 2 n^2 d_v + 5 n^2``
    lam:     ``4 n d_k d_v + 3 n (d_k + d_v)``
    channel: ``4 n c^2 + 5 c^2``
    """
    method = FlopMethod(method)
    n, c, dk, dv = dims.n, dims.c, dims.d_k, dims.d_v
    if method is FlopMethod.SOFTMAX:
        return 2 * n * n * dk + 2 * n * n * dv + 5 * n * n
    if method is FlopMethod.LAM:
        return 2 * n * dk * dv + 2 * n * dk * dv + 3 * n * (dk + dv)
    return 2 * n * c * c + 2 * n * c * c + 5 * c * c
