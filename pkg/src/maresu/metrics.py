"""Segmentation accuracy metrics and the kappa significance test.

Confusion matrices are indexed ``counts[true, predicted]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DegenerateError, ParameterError

Z_CRITICAL_95 = 1.96


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise DataError(f"confusion matrix must be square, got shape {counts.shape}")
        if not np.issubdtype(counts.dtype, np.integer):
            if not np.all(np.isfinite(counts)) or np.any(counts != np.round(counts)):
                raise DataError("confusion counts must be integers")
        counts = counts.astype(np.int64)
        if (counts < 0).any():
            raise DataError("confusion counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.k != self.k:
            raise DataError(f"cannot add {self.k}-class and {other.k}-class matrices")
        return ConfusionMatrix(self.counts + other.counts)

    def _proportions(self) -> np.ndarray:
        if self.total <= 0:
            raise DegenerateError("confusion matrix is empty")
        return self.counts / self.total


@dataclass(frozen=True)
class KappaReport:
    kappa: float
    variance: float
    n: int


def confusion(pred, truth, k: int, ignore_label: int | None = None) -> ConfusionMatrix:
    """Tally a ``k x k`` confusion matrix from two equally shaped label maps.

    Pixels whose true label equals ``ignore_label`` are skipped.
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise DataError(f"label maps differ in shape: {pred.shape} vs {truth.shape}")
    if k < 1:
        raise ParameterError(f"k must be positive, got {k}")
    pred = pred.ravel().astype(np.int64)
    truth = truth.ravel().astype(np.int64)
    if ignore_label is not None:
        keep = truth != ignore_label
        index = np.flatnonzero(keep)
        pred, truth = pred[keep], truth[keep]
    else:
        index = np.arange(pred.size)
    for name, labels in (("truth", truth), ("pred", pred)):
        bad = np.flatnonzero((labels < 0) | (labels >= k))
        if bad.size:
            i = int(index[bad[0]])
            raise DataError(f"{name} label {labels[bad[0]]} at flat index {i} is outside [0, {k})")
    counts = np.bincount(truth * k + pred, minlength=k * k).reshape(k, k)
    return ConfusionMatrix(counts)


def overall_accuracy(cm: ConfusionMatrix) -> float:
    p = cm._proportions()
    return float(np.trace(p))


def _tp_fp_fn(cm: ConfusionMatrix):
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    return tp, c.sum(axis=0) - tp, c.sum(axis=1) - tp


def per_class_f1(cm: ConfusionMatrix) -> np.ndarray:
    """F1 per class; a class with neither predictions nor ground truth scores 0."""
    cm._proportions()
    tp, fp, fn = _tp_fp_fn(cm)
    # 2PR/(P+R) simplifies to 2TP/(2TP+FP+FN)
    den = 2 * tp + fp + fn
    return np.divide(2 * tp, den, out=np.zeros_like(tp), where=den > 0)


def per_class_iou(cm: ConfusionMatrix) -> np.ndarray:
    cm._proportions()
    tp, fp, fn = _tp_fp_fn(cm)
    den = tp + fp + fn
    return np.divide(tp, den, out=np.zeros_like(tp), where=den > 0)


def mean_f1(cm: ConfusionMatrix) -> float:
    return float(per_class_f1(cm).mean())


def miou(cm: ConfusionMatrix) -> float:
    return float(per_class_iou(cm).mean())


def _agreement(cm: ConfusionMatrix):
    p = cm._proportions()
    rows = p.sum(axis=1)
    cols = p.sum(axis=0)
    p_o = float(np.trace(p))
    p_e = float(rows @ cols)
    if p_e >= 1.0:
        raise DegenerateError("chance agreement is 1 (single-class marginals); kappa undefined")
    return p, rows, cols, p_o, p_e


def kappa(cm: ConfusionMatrix) -> float:
    """Cohen's kappa ``(p_o - p_e) / (1 - p_e)``."""
    _, _, _, p_o, p_e = _agreement(cm)
    return (p_o - p_e) / (1.0 - p_e)


def kappa_variance(cm: ConfusionMatrix, method: str = "delta") -> float:
    """Large-sample variance of kappa.

    ``method="delta"`` is the full Fleiss-Cohen-Everitt expression::

        t1 = sum p_ii              t2 = sum p_i+ p_+i
        t3 = sum p_ii (p_i+ + p_+i)
        t4 = sum_ij p_ij (p_j+ + p_+i)^2
        var = [ t1(1-t1)/(1-t2)^2
              + 2(1-t1)(2 t1 t2 - t3)/(1-t2)^3
              + (1-t1)^2 (t4 - 4 t2^2)/(1-t2)^4 ] / n

    ``method="simple"`` is the common approximation
    ``p_o (1 - p_o) / (n (1 - p_e)^2)``.
    """
    p, rows, cols, t1, t2 = _agreement(cm)
    n = cm.total
    if method == "simple":
        return t1 * (1 - t1) / (n * (1 - t2) ** 2)
    if method != "delta":
        raise ParameterError(f"unknown variance method {method!r}; use 'delta' or 'simple'")
    t3 = float(np.diag(p) @ (rows + cols))
    t4 = float((p * (rows[None, :] + cols[:, None]) ** 2).sum())
    var = (
        t1 * (1 - t1) / (1 - t2) ** 2
        + 2 * (1 - t1) * (2 * t1 * t2 - t3) / (1 - t2) ** 3
        + (1 - t1) ** 2 * (t4 - 4 * t2 * t2) / (1 - t2) ** 4
    ) / n
    # the bracket is a variance, so only rounding can push it below zero
    return max(var, 0.0)


def kappa_report(cm: ConfusionMatrix, method: str = "delta") -> KappaReport:
    return KappaReport(kappa(cm), kappa_variance(cm, method), cm.total)


def z_test(k1: float, v1: float, k2: float, v2: float) -> float:
    """Signed z statistic ``(k1 - k2) / sqrt(v1 + v2)`` for two independent kappas."""
    if not v1 + v2 > 0:
        raise ParameterError(f"variances must sum to a positive value, got {v1} + {v2}")
    return (k1 - k2) / math.sqrt(v1 + v2)


def significant(z: float, critical: float = Z_CRITICAL_95) -> bool:
    """True when ``|z|`` exceeds the two-sided critical value (95% by default)."""
    return abs(z) > critical
