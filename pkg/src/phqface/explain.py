"""Exact TreeSHAP attributions for forests, permutation importance and top-k reports.

Conditional expectations follow each tree's node covers, i.e. the in-bag
(bootstrap) weight of the training fold that reached every node.
"""
from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import ConfigError
from .evaluation.experiment import fit_fold
from .evaluation.metrics import METRIC_DIRECTION, score_predictions
from .models.forest import RandomForest

log = logging.getLogger(__name__)


@numba.njit(cache=True, nogil=True)
def _extend(pf, pz, po, pw, row, ud, zero, one, fi):
    pf[row, ud] = fi
    pz[row, ud] = zero
    po[row, ud] = one
    pw[row, ud] = 1.0 if ud == 0 else 0.0
    for i in range(ud - 1, -1, -1):
        pw[row, i + 1] += one * pw[row, i] * (i + 1) / (ud + 1)
        pw[row, i] = zero * pw[row, i] * (ud - i) / (ud + 1)


@numba.njit(cache=True, nogil=True)
def _unwind(pf, pz, po, pw, row, ud, idx):
    one = po[row, idx]
    zero = pz[row, idx]
    nxt = pw[row, ud]
    for i in range(ud - 1, -1, -1):
        if one != 0.0:
            tmp = pw[row, i]
            pw[row, i] = nxt * (ud + 1) / ((i + 1) * one)
            nxt = tmp - pw[row, i] * zero * (ud - i) / (ud + 1)
        else:
            pw[row, i] = pw[row, i] * (ud + 1) / (zero * (ud - i))
    for i in range(idx, ud):
        pf[row, i] = pf[row, i + 1]
        pz[row, i] = pz[row, i + 1]
        po[row, i] = po[row, i + 1]


@numba.njit(cache=True, nogil=True)
def _unwound_sum(pz, po, pw, row, ud, idx):
    one = po[row, idx]
    zero = pz[row, idx]
    nxt = pw[row, ud]
    total = 0.0
    if one != 0.0:
        for i in range(ud - 1, -1, -1):
            tmp = nxt / ((i + 1) * one)
            total += tmp
            nxt = pw[row, i] - tmp * zero * (ud - i)
    else:
        for i in range(ud - 1, -1, -1):
            total += pw[row, i] / (zero * (ud - i))
    return total * (ud + 1)


# Not disk-cached: cached recursive kernels can go stale against their callees.
@numba.njit(nogil=True)
def _recurse(node, lvl, ud, pzero, pone, pfeat, x, feature, threshold, left, right, value, cover,
             pf, pz, po, pw, phi):
    if lvl > 0:
        for i in range(ud):
            pf[lvl, i] = pf[lvl - 1, i]
            pz[lvl, i] = pz[lvl - 1, i]
            po[lvl, i] = po[lvl - 1, i]
            pw[lvl, i] = pw[lvl - 1, i]
    _extend(pf, pz, po, pw, lvl, ud, pzero, pone, pfeat)
    f = feature[node]
    if f < 0:
        for i in range(1, ud + 1):
            w = _unwound_sum(pz, po, pw, lvl, ud, i)
            phi[pf[lvl, i]] += w * (po[lvl, i] - pz[lvl, i]) * value[node]
        return
    if x[f] <= threshold[node]:
        hot = left[node]
        cold = right[node]
    else:
        hot = right[node]
        cold = left[node]
    iz = 1.0
    io = 1.0
    k = -1
    for i in range(1, ud + 1):
        if pf[lvl, i] == f:
            k = i
            break
    if k >= 0:
        iz = pz[lvl, k]
        io = po[lvl, k]
        _unwind(pf, pz, po, pw, lvl, ud, k)
        ud -= 1
    _recurse(hot, lvl + 1, ud + 1, iz * cover[hot] / cover[node], io, f, x, feature, threshold, left, right,
             value, cover, pf, pz, po, pw, phi)
    _recurse(cold, lvl + 1, ud + 1, iz * cover[cold] / cover[node], 0.0, f, x, feature, threshold, left,
             right, value, cover, pf, pz, po, pw, phi)


@numba.njit(nogil=True)
def _tree_shap_rows(X, feature, threshold, left, right, value, cover, depth, out):
    size = depth + 2
    pf = np.zeros((size, size), np.int64)
    pz = np.zeros((size, size))
    po = np.zeros((size, size))
    pw = np.zeros((size, size))
    for r in range(X.shape[0]):
        _recurse(0, 0, 0, 1.0, 1.0, -1, X[r], feature, threshold, left, right, value, cover,
                 pf, pz, po, pw, out[r])


@dataclass
class Attribution:
    base_value: float
    phi: np.ndarray
    prediction: float


def tree_shap_values(model, X) -> tuple[float, np.ndarray, np.ndarray]:
    """Base value, (n x p) Shapley matrix and predictions for a forest or tree."""
    trees = model.trees if isinstance(model, RandomForest) else [model]
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
    p = model.n_features if isinstance(model, RandomForest) else X.shape[1]
    if X.shape[1] != p:
        raise ValueError(f"expected {p} features, got {X.shape[1]}")
    phi = np.zeros((X.shape[0], p))
    pred = np.zeros(X.shape[0])
    base = 0.0
    for t in trees:
        part = np.zeros_like(phi)
        _tree_shap_rows(X, t.feature.astype(np.int64), t.threshold, t.left.astype(np.int64),
                        t.right.astype(np.int64), t.value, t.cover, t.depth(), part)
        phi += part
        pred += t.predict(X)
        base += t.expected_value
    k = len(trees)
    return base / k, phi / k, pred / k


def tree_shap(model, x) -> Attribution:
    base, phi, pred = tree_shap_values(model, np.asarray(x, dtype=float)[None, :])
    return Attribution(base, phi[0], float(pred[0]))


@dataclass
class ImportanceReport:
    method: str
    features: list = field(default_factory=list)  # dicts: rank, name, score, direction
    k: int = 10
    degenerate: bool = False
    notes: list = field(default_factory=list)

    @property
    def names(self) -> list[str]:
        return [f["name"] for f in self.features]

    def to_dict(self) -> dict:
        return {"method": self.method, "k": self.k, "degenerate": self.degenerate,
                "features": self.features, "notes": self.notes}


def _direction(x, phi) -> int:
    """Sign of the correlation between a feature's values and its attributions."""
    if np.std(x) == 0 or np.std(phi) == 0:
        return 0
    c = np.corrcoef(x, phi)[0, 1]
    return 0 if not np.isfinite(c) or c == 0 else int(np.sign(c))


def top_k_report(phi, X, names, k: int = 10) -> ImportanceReport:
    """Rank features by mean |phi|; ties keep the input (registry) order."""
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    X = np.atleast_2d(np.asarray(X, dtype=float))
    names = list(names)
    if phi.shape[0] < 1:
        raise ValueError("need at least one attribution")
    report = ImportanceReport(method="tree_shap_mean_abs", k=k)
    if k > len(names):
        warnings.warn(f"k={k} exceeds {len(names)} features; clamped")
        report.notes.append(f"k clamped from {k} to {len(names)}")
        k = report.k = len(names)
    score = np.abs(phi).mean(axis=0)
    if not np.any(score > 0):
        report.degenerate = True
        report.notes.append("all attributions are zero; ranking follows feature order")
    order = sorted(range(len(names)), key=lambda j: (-score[j], j))[:k]
    for rank, j in enumerate(order, start=1):
        report.features.append({
            "rank": rank, "name": names[j], "score": float(score[j]),
            "direction": _direction(X[:, j], phi[:, j]),
        })
    return report


def permutation_importance(predict, X, y, metric: str = "balanced_accuracy", n_repeats: int = 5,
                           seed: int = 0, names=None, k: int | None = None) -> ImportanceReport:
    """Mean metric degradation after shuffling each column independently."""
    if n_repeats < 1:
        raise ValueError("n_repeats must be >= 1")
    if metric not in METRIC_DIRECTION:
        raise ValueError(f"unknown metric {metric!r}")
    X = np.array(X, dtype=float)
    y = np.asarray(y)
    names = list(names) if names is not None else [f"f{j}" for j in range(X.shape[1])]
    sign = METRIC_DIRECTION[metric]
    baseline = score_predictions(metric, y, predict(X))
    rng = np.random.default_rng(seed)
    scores = np.zeros(X.shape[1])
    for j in range(X.shape[1]):
        orig = X[:, j].copy()
        drops = []
        for _ in range(n_repeats):
            X[:, j] = orig[rng.permutation(len(orig))]
            drops.append(sign * (baseline - score_predictions(metric, y, predict(X))))
        X[:, j] = orig
        scores[j] = float(np.mean(drops))
    k = len(names) if k is None else min(k, len(names))
    order = sorted(range(len(names)), key=lambda j: (-scores[j], j))[:k]
    report = ImportanceReport(method=f"permutation_{metric}", k=k)
    report.features = [{"rank": r, "name": names[j], "score": float(scores[j]), "direction": 0}
                       for r, j in enumerate(order, start=1)]
    report.notes.append(f"baseline {metric}={baseline:.6g}; n_repeats={n_repeats}; seed={seed}")
    return report


def write_attributions_csv(path, sample_ids, names, phi) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "feature", "phi"])
        for sid, row in zip(sample_ids, phi):
            for name, v in zip(names, row):
                w.writerow([sid, name, repr(float(v))])


def write_ranking_json(path, report: ImportanceReport, extra: dict | None = None) -> None:
    payload = report.to_dict()
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class ExplainResult:
    sample_ids: np.ndarray
    names: list
    phi: np.ndarray
    base_value: float
    prediction: np.ndarray
    ranking: ImportanceReport
    tuning: dict
    local_accuracy_error: float
    permutation: ImportanceReport | None = None


def explain_fold(dataset, model_spec, feature_spec, plan, fold: int = 0, task: str = "classify", seed: int = 0,
                 threads: int | None = None, inner_k: int = 3, max_samples: int = 500, top_k: int = 10,
                 permutation_repeats: int = 0) -> ExplainResult:
    """Tune and fit one outer fold's forest, then attribute held-out samples."""
    if model_spec.family == "linear":
        raise ConfigError("TreeSHAP attributions need a forest model (model family rf or baseline)")
    if not 0 <= fold < plan.k:
        raise ConfigError(f"fold {fold} outside 0..{plan.k - 1}")
    if max_samples < 1:
        raise ConfigError("max_samples must be >= 1")
    fitted, info, te, X_te = fit_fold(dataset, model_spec, feature_spec, plan, fold, task, seed, threads, inner_k)
    rng = np.random.default_rng(seed)
    m = min(max_samples, len(te))
    pick = np.sort(rng.choice(len(te), size=m, replace=False))
    X = np.ascontiguousarray(X_te[pick])
    base, phi, pred = tree_shap_values(fitted.model, X)
    err = float(np.max(np.abs(base + phi.sum(axis=1) - pred))) if m else 0.0
    ranking = top_k_report(phi, X, fitted.features, k=top_k)
    perm = None
    if permutation_repeats > 0:
        y = (dataset.label if task == "classify" else dataset.total)[te][pick]
        metric = "balanced_accuracy" if task == "classify" else "mae"
        perm = permutation_importance(fitted.predict, X, y, metric, permutation_repeats, seed, fitted.features, top_k)
    return ExplainResult(dataset.image_id[te][pick], list(fitted.features), phi, base, pred, ranking, info, err, perm)
