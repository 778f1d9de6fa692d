"""Confusion-matrix and regression metrics."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateMetricWarning, UndefinedMetricError

METRICS = ("balanced_accuracy", "mcc", "mae", "r_squared")
# +1: higher is better, -1: lower is better
METRIC_DIRECTION = {"balanced_accuracy": 1, "mcc": 1, "mae": -1, "r_squared": 1}


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "tn", "fp", "fn"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ValueError(f"{name}={v} must be a nonnegative integer")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @classmethod
    def from_labels(cls, y_true, y_pred) -> "ConfusionMatrix":
        t = np.asarray(y_true).astype(bool)
        p = np.asarray(y_pred).astype(bool)
        if t.shape != p.shape:
            raise ValueError("label vectors differ in length")
        return cls(int(np.sum(t & p)), int(np.sum(~t & ~p)), int(np.sum(~t & p)), int(np.sum(t & ~p)))


def balanced_accuracy(cm: ConfusionMatrix) -> float:
    if cm.tp + cm.fn == 0 or cm.tn + cm.fp == 0:
        raise UndefinedMetricError("balanced accuracy undefined: a true class has no samples")
    return (cm.tp / (cm.tp + cm.fn) + cm.tn / (cm.tn + cm.fp)) / 2.0


def mcc_with_flag(cm: ConfusionMatrix) -> tuple[float, bool]:
    """MCC plus a flag set when a zero marginal forces the 0 convention."""
    factors = (cm.tp + cm.fp, cm.tp + cm.fn, cm.tn + cm.fp, cm.tn + cm.fn)
    if 0 in factors:
        return 0.0, True
    num = cm.tp * cm.tn - cm.fp * cm.fn
    return num / math.sqrt(float(factors[0]) * factors[1] * factors[2] * factors[3]), False


def mcc(cm: ConfusionMatrix) -> float:
    value, degenerate = mcc_with_flag(cm)
    if degenerate:
        warnings.warn("MCC denominator is zero; returning 0 by convention", DegenerateMetricWarning)
    return value


def mae(y_true, y_pred) -> float:
    t = np.asarray(y_true, dtype=float)
    p = np.asarray(y_pred, dtype=float)
    if t.shape != p.shape:
        raise ValueError(f"length mismatch: {t.shape} vs {p.shape}")
    if t.size == 0:
        raise ValueError("mae needs at least one value")
    return float(np.mean(np.abs(t - p)))


def r_squared(y_true, y_pred) -> float:
    t = np.asarray(y_true, dtype=float)
    p = np.asarray(y_pred, dtype=float)
    if t.shape != p.shape:
        raise ValueError(f"length mismatch: {t.shape} vs {p.shape}")
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    if ss_tot == 0:
        raise UndefinedMetricError("R^2 undefined: labels have zero variance")
    return 1.0 - float(np.sum((t - p) ** 2)) / ss_tot


def score_predictions(metric: str, y_true, y_pred, threshold: float = 0.5) -> float:
    """Score raw model output; classification metrics threshold probabilities."""
    if metric in ("balanced_accuracy", "mcc"):
        cm = ConfusionMatrix.from_labels(np.asarray(y_true) > 0.5, np.asarray(y_pred) >= threshold)
        return balanced_accuracy(cm) if metric == "balanced_accuracy" else mcc_with_flag(cm)[0]
    if metric == "mae":
        return mae(y_true, y_pred)
    if metric == "r_squared":
        return r_squared(y_true, y_pred)
    raise ValueError(f"unknown metric {metric!r}")
