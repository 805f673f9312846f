"""Edge-recovery and estimation-error metrics over unordered node pairs."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

Edge = tuple[int, int]


@dataclass
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def edge_set(omega: np.ndarray, threshold: float = 1e-8) -> set[Edge]:
    """Unordered pairs (i, j), i < j (0-based), with |omega_ij| > threshold."""
    p = omega.shape[0]
    iu, ju = np.triu_indices(p, k=1)
    keep = np.abs(omega[iu, ju]) > threshold
    return {(int(i), int(j)) for i, j in zip(iu[keep], ju[keep])}


def confusion(estimated: set[Edge], truth: set[Edge], p: int) -> ConfusionCounts:
    """Counts over the universe of p(p-1)/2 candidate pairs."""
    universe = p * (p - 1) // 2
    tp = len(estimated & truth)
    fp = len(estimated - truth)
    fn = len(truth - estimated)
    tn = universe - tp - fp - fn
    return ConfusionCounts(tp=tp, tn=tn, fp=fp, fn=fn)


def mcc(c: ConfusionCounts) -> float:
    """Matthews correlation coefficient; 0 when any denominator factor is 0."""
    num = c.tp * c.tn - c.fp * c.fn
    den = (
        (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
    )
    if den == 0:
        return 0.0
    return num / math.sqrt(den)


def precision_recall(c: ConfusionCounts) -> tuple[float, float]:
    """(TP/(TP+FP), TP/(TP+FN)); 0/0 counts as 0."""
    precision = c.tp / (c.tp + c.fp) if (c.tp + c.fp) > 0 else 0.0
    recall = c.tp / (c.tp + c.fn) if (c.tp + c.fn) > 0 else 0.0
    return precision, recall


def mofe(omega_est: np.ndarray, omega_true: np.ndarray) -> float:
    """Frobenius norm of the off-diagonal difference (both triangles)."""
    if omega_est.shape != omega_true.shape:
        raise ValueError(
            f"shape mismatch: {omega_est.shape} vs {omega_true.shape}"
        )
    diff = omega_est - omega_true
    off = ~np.eye(diff.shape[0], dtype=bool)
    return float(np.sqrt(np.sum(diff[off] ** 2)))
