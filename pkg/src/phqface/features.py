"""Feature-set projection, mutual-information scoring and standardization."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from . import registry

MI_MODES = ("independence", "relevance")


def select_group(dataset, group: str):
    """Project a Dataset onto one registry group, in registry order."""
    return dataset.project(registry.group_columns(group))


def discretize(x, bins: int = 10) -> np.ndarray:
    """Equal-frequency bin codes; tied values always share a bin."""
    x = np.asarray(x, dtype=float)
    if bins < 2:
        raise ValueError("bins must be >= 2")
    edges = np.quantile(x, np.arange(1, bins) / bins)
    return np.searchsorted(edges, x, side="right").astype(np.int64)


def discretize_columns(X, bins: int = 10) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    out = np.empty(X.shape, dtype=np.int64)
    for j in range(X.shape[1]):
        out[:, j] = discretize(X[:, j], bins)
    return out


@numba.njit(cache=True, nogil=True)
def _mi_codes(a, b, ka, kb):
    n = a.shape[0]
    joint = np.zeros((ka, kb))
    for i in range(n):
        joint[a[i], b[i]] += 1.0
    pa = joint.sum(axis=1)
    pb = joint.sum(axis=0)
    mi = 0.0
    for i in range(ka):
        for j in range(kb):
            c = joint[i, j]
            if c > 0:
                mi += c / n * math.log(c * n / (pa[i] * pb[j]))
    return max(mi, 0.0)


@numba.njit(cache=True, parallel=True)
def _pairwise_mi(codes, k):
    p = codes.shape[1]
    out = np.zeros((p, p))
    for i in numba.prange(p):
        for j in range(i + 1, p):
            v = _mi_codes(codes[:, i], codes[:, j], k, k)
            out[i, j] = v
            out[j, i] = v
    return out


def mutual_information(x, y, bins: int = 10) -> float:
    """Plug-in MI (nats) between two variables after equal-frequency binning."""
    a, b = discretize(x, bins), discretize(y, bins)
    return float(_mi_codes(a, b, bins, bins))


@dataclass(frozen=True)
class FeatureScore:
    name: str
    mi_with_label: float
    mean_pairwise_mi: float


def label_codes(y, task: str = "classify") -> tuple[np.ndarray, int]:
    y = np.asarray(y)
    if task == "classify":
        return y.astype(np.int64), 2
    return discretize(y, 4), 4


def mi_scores(X, y, names=None, bins: int = 10, task: str = "classify",
              pairwise: bool = True) -> list[FeatureScore]:
    """MI of each feature with the label and its mean MI against the others.

    Regression labels are binned into quartiles. Only pass training rows.
    """
    X = np.asarray(X, dtype=float)
    if X.shape[0] < 2:
        raise ValueError("mi_scores needs at least 2 samples")
    names = list(names) if names is not None else [f"f{j}" for j in range(X.shape[1])]
    codes = discretize_columns(X, bins)
    ycodes, ky = label_codes(y, task)
    p = X.shape[1]
    with_label = np.array([_mi_codes(codes[:, j], ycodes, bins, ky) for j in range(p)])
    if pairwise and p > 1:
        mean_pair = _pairwise_mi(np.ascontiguousarray(codes), bins).sum(axis=1) / (p - 1)
    else:
        mean_pair = np.zeros(p)
    return [FeatureScore(n, float(a), float(b)) for n, a, b in zip(names, with_label, mean_pair)]


def selection_size(n: int, fraction: float) -> int:
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction {fraction} outside (0, 1]")
    return min(n, math.ceil(round(fraction * n, 9)))


def select_fraction(scores, fraction: float, mode: str = "independence") -> list[str]:
    """Keep ceil(fraction*n) features, returned in their original order.

    independence keeps the smallest mean pairwise MI, relevance the largest MI
    with the label; ties go to the earlier feature.
    """
    if mode not in MI_MODES:
        raise ValueError(f"mode must be one of {MI_MODES}")
    scores = list(scores)
    if not scores:
        raise ValueError("no scores")
    k = selection_size(len(scores), fraction)
    if mode == "independence":
        order = sorted(range(len(scores)), key=lambda i: (scores[i].mean_pairwise_mi, i))
    else:
        order = sorted(range(len(scores)), key=lambda i: (-scores[i].mi_with_label, i))
    keep = sorted(order[:k])
    return [scores[i].name for i in keep]


@dataclass(frozen=True)
class ScalerParams:
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "constant": self.constant.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["mean"], dtype=float), np.array(d["std"], dtype=float),
                   np.array(d["constant"], dtype=bool))


def fit_scaler(X) -> ScalerParams:
    X = np.asarray(X, dtype=float)
    if X.shape[0] == 0:
        raise ValueError("cannot fit a scaler on an empty split")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    constant = ~(std > 0)
    return ScalerParams(mean, np.where(constant, 1.0, std), constant)


def apply_scaler(params: ScalerParams, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[0] == 0:
        raise ValueError("cannot scale an empty split")
    out = (X - params.mean) / params.std
    if params.constant.any():
        out[:, params.constant] = X[:, params.constant]
    return out
