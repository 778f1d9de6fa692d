"""Cross-validated experiments, ablation over feature sets and subgroup reports."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from itertools import product

import numpy as np

from .. import registry
from ..errors import ConfigError, UndefinedMetricError
from ..features import (MI_MODES, ScalerParams, apply_scaler, fit_scaler, mi_scores,
                        select_fraction)
from ..models import BASELINE_INPUTS, fit_elastic_net, fit_logistic, fit_random_forest, model_to_json
from .cv import SplitPlan, nested_tune
from .metrics import ConfusionMatrix, balanced_accuracy, mae, mcc_with_flag, r_squared

log = logging.getLogger(__name__)

TASKS = ("classify", "regress")
SCORE_RANGE = (0.0, 800.0)

RF_GRID = [
    {"n_trees": t, "max_depth": d, "min_samples_leaf": m}
    for t, d, m in product((100, 300), (8, 16, None), (1, 5))
]
LOGISTIC_GRID = [{"l2": v} for v in (0.001, 0.01, 0.1)]
ENET_GRID = [{"lam": lam, "alpha_mix": a} for lam, a in product((0.001, 0.01, 0.1, 1.0), (0.1, 0.5, 0.9))]
FAMILIES = ("rf", "linear", "baseline")


@dataclass
class ModelSpec:
    family: str = "rf"
    classify_grid: list | None = None
    regress_grid: list | None = None
    tasks: tuple = TASKS
    class_weight: str | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"model family must be one of {FAMILIES}, got {self.family!r}")
        self.tasks = tuple(self.tasks)
        if not self.tasks or any(t not in TASKS for t in self.tasks):
            raise ConfigError(f"tasks must be drawn from {TASKS}")
        for task in self.tasks:
            if not self.grid(task):
                raise ConfigError(f"empty hyperparameter grid for {task}")

    def grid(self, task: str) -> list[dict]:
        given = self.classify_grid if task == "classify" else self.regress_grid
        if given is not None:
            # Config files cannot hold null; a depth of 0 or "none" means unbounded.
            return [{k: (None if k == "max_depth" and v in (0, "none") else v) for k, v in g.items()}
                    for g in given]
        if self.family in ("rf", "baseline"):
            return [dict(g) for g in RF_GRID]
        return [dict(g) for g in (LOGISTIC_GRID if task == "classify" else ENET_GRID)]

    def to_dict(self) -> dict:
        return {
            "family": self.family, "tasks": list(self.tasks), "class_weight": self.class_weight,
            "classify_grid": self.grid("classify"), "regress_grid": self.grid("regress"),
        }


@dataclass
class FeatureSpec:
    group: str | None = None  # None means all 709 registry features
    mi_mode: str = "independence"
    mi_fraction: float = 1.0
    bins: int = 10

    def __post_init__(self):
        if self.group in ("all", ""):
            self.group = None
        if self.group is not None and self.group not in registry.GROUPS:
            raise ConfigError(f"unknown feature set {self.group!r}; choose from all, {', '.join(registry.GROUPS)}")
        if self.mi_mode not in MI_MODES:
            raise ConfigError(f"mi_mode must be one of {MI_MODES}")
        if not 0.0 < self.mi_fraction <= 1.0:
            raise ConfigError("mi_fraction must be in (0, 1]")

    def columns(self) -> list[str]:
        return list(registry.FEATURE_NAMES) if self.group is None else registry.group_columns(self.group)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FittedModel:
    """A trained predictor with its feature subset and optional scaler."""

    task: str
    features: list
    model: object
    scaler: ScalerParams | None = None
    hyperparameters: dict = field(default_factory=dict)
    seed: int = 0

    def predict(self, X) -> np.ndarray:
        if self.scaler is not None:
            X = apply_scaler(self.scaler, X)
        out = self.model.predict(X)
        if self.task == "regress":
            out = np.clip(out, *SCORE_RANGE)
        return out

    def to_json(self) -> str:
        payload = {
            "format_version": 1, "task": self.task, "features": list(self.features),
            "hyperparameters": self.hyperparameters, "seed": self.seed,
            "scaler": None if self.scaler is None else self.scaler.to_dict(),
            "model": json.loads(model_to_json(self.model)),
        }
        return json.dumps(payload, sort_keys=True)


def fit_model(family: str, task: str, params: dict, X, y, seed: int = 0, threads: int | None = None,
              class_weight: str | None = None, features=None) -> FittedModel:
    features = list(features) if features is not None else [f"f{j}" for j in range(np.shape(X)[1])]
    if family in ("rf", "baseline"):
        model = fit_random_forest(X, y, task=task, seed=seed, threads=threads, class_weight=class_weight, **params)
        return FittedModel(task, features, model, None, dict(params), seed)
    scaler = fit_scaler(X)
    Xs = apply_scaler(scaler, X)
    if task == "classify":
        sw = None
        if class_weight == "balanced":
            pos = float(np.sum(y))
            n = len(y)
            if 0 < pos < n:
                sw = np.where(np.asarray(y) > 0.5, n / (2 * pos), n / (2 * (n - pos)))
        model = fit_logistic(Xs, y, l2=params.get("l2", 0.01), sample_weight=sw,
                             max_iter=params.get("max_iter", 500), tol=params.get("tol", 1e-6))
    else:
        # Penalty acts on the standardized response; coefficients map back exactly.
        y = np.asarray(y, dtype=float)
        mu, sd = float(y.mean()), float(y.std())
        sd = sd if sd > 0 else 1.0
        model = fit_elastic_net(Xs, (y - mu) / sd, lam=params.get("lam", 0.1),
                                alpha_mix=params.get("alpha_mix", 0.5),
                                max_sweeps=params.get("max_sweeps", 5000), tol=params.get("tol", 1e-6))
        model.coef = model.coef * sd
        model.intercept = model.intercept * sd + mu
    return FittedModel(task, features, model, scaler, dict(params), seed)


def _classification_metrics(y_true, proba) -> dict:
    cm = ConfusionMatrix.from_labels(y_true, np.asarray(proba) >= 0.5)
    try:
        ba = balanced_accuracy(cm)
    except UndefinedMetricError:
        ba = None
    mcc, flag = mcc_with_flag(cm)
    single_class = cm.tp + cm.fn == 0 or cm.tn + cm.fp == 0
    return {
        "balanced_accuracy": ba,
        "mcc": None if single_class else mcc,
        "mcc_degenerate": flag,
        "confusion": {"tp": cm.tp, "tn": cm.tn, "fp": cm.fp, "fn": cm.fn},
    }


def _regression_metrics(y_true, pred) -> dict:
    try:
        r2 = r_squared(y_true, pred)
    except UndefinedMetricError:
        r2 = None
    return {"mae": mae(y_true, pred), "r_squared": r2}


METRIC_KEYS = ("balanced_accuracy", "mcc", "mae", "r_squared")


@dataclass
class MetricsReport:
    per_fold: list = field(default_factory=list)

    def values(self, metric: str) -> list[float]:
        return [f[metric] for f in self.per_fold if f.get(metric) is not None]

    def mean(self, metric: str) -> float | None:
        v = self.values(metric)
        return float(np.mean(v)) if v else None

    def std(self, metric: str) -> float | None:
        v = self.values(metric)
        return float(np.std(v, ddof=1)) if len(v) >= 2 else None

    def summary(self) -> dict:
        return {m: {"mean": self.mean(m), "std": self.std(m), "n_folds": len(self.values(m))} for m in METRIC_KEYS}

    def to_dict(self) -> dict:
        return {"per_fold": self.per_fold, "summary": self.summary()}


@dataclass
class ExperimentResult:
    metrics: MetricsReport
    folds: list
    provenance: dict
    proba: np.ndarray
    score: np.ndarray
    fold_of: np.ndarray
    models: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"metrics": self.metrics.to_dict(), "folds": self.folds, "provenance": self.provenance}


def _model_seed(seed: int, fold: int, task: str) -> int:
    return int(seed) * 1000 + fold * 10 + TASKS.index(task)


def _feature_matrix(dataset, model_spec: ModelSpec, feature_spec: FeatureSpec):
    if model_spec.family == "baseline":
        return dataset.baseline_matrix(), list(BASELINE_INPUTS)
    cols = feature_spec.columns()
    pos = {n: i for i, n in enumerate(dataset.feature_names)}
    missing = [c for c in cols if c not in pos]
    if missing:
        raise ConfigError(f"dataset lacks feature columns {missing[:5]}")
    if cols == list(dataset.feature_names):
        return dataset.X, cols
    return dataset.X[:, [pos[c] for c in cols]], cols


def select_features(X_train, y_label, y_total, names, feature_spec: FeatureSpec, task: str) -> list[str]:
    """Fraction-based MI selection fitted on training rows only."""
    if feature_spec.mi_fraction >= 1.0:
        return list(names)
    independence = feature_spec.mi_mode == "independence"
    y = y_label if task == "classify" else y_total
    scores = mi_scores(X_train, y, names, bins=feature_spec.bins, task=task, pairwise=independence)
    return select_fraction(scores, feature_spec.mi_fraction, feature_spec.mi_mode)


def fit_fold(dataset, model_spec: ModelSpec, feature_spec: FeatureSpec, plan: SplitPlan, fold: int,
             task: str, seed: int = 0, threads: int | None = None, inner_k: int = 3,
             X_all=None, names=None, selected=None):
    """Tune on the fold's training participants and refit; returns (model, info, test rows)."""
    if X_all is None:
        X_all, names = _feature_matrix(dataset, model_spec, feature_spec)
    train_p, test_p = plan.train(fold), plan.test(fold)
    tr = dataset.indices_for(train_p)
    te = dataset.indices_for(test_p)
    overlap = set(dataset.participant_id[tr].tolist()) & set(dataset.participant_id[te].tolist())
    if overlap:
        raise AssertionError(f"participant leakage between train and test: {sorted(overlap)[:5]}")
    X_tr = np.ascontiguousarray(X_all[tr])
    y_tr = (dataset.label if task == "classify" else dataset.total)[tr].astype(float)
    if selected is None:
        if model_spec.family == "baseline":
            selected = list(names)
        else:
            selected = select_features(X_tr, dataset.label[tr], dataset.total[tr], names, feature_spec, task)
    if len(selected) != len(names):
        pos = {n: i for i, n in enumerate(names)}
        X_tr = np.ascontiguousarray(X_tr[:, [pos[n] for n in selected]])
        cols = [pos[n] for n in selected]
    else:
        cols = None
    pid_tr = dataset.participant_id[tr]
    mseed = _model_seed(seed, fold, task)

    def evaluate(params, inner_train, inner_val):
        a = np.isin(pid_tr, inner_train)
        b = np.isin(pid_tr, inner_val)
        fitted = fit_model(model_spec.family, task, params, X_tr[a], y_tr[a], seed=mseed, threads=threads,
                           class_weight=model_spec.class_weight, features=selected)
        pred = fitted.predict(X_tr[b])
        if task == "classify":
            return _classification_metrics(y_tr[b], pred)["balanced_accuracy"]
        return mae(y_tr[b], pred)

    tune = nested_tune(train_p, model_spec.grid(task), evaluate, inner_k=inner_k, objective=task,
                       seed=seed + fold + 1)
    model = fit_model(model_spec.family, task, tune.best, X_tr, y_tr, seed=mseed, threads=threads,
                      class_weight=model_spec.class_weight, features=selected)
    info = {
        "task": task, "hyperparameters": tune.best, "grid_index": tune.best_index,
        "inner_scores": tune.scores, "model_seed": mseed, "n_features": len(selected),
        "features": selected if len(selected) != len(names) else "all",
    }
    X_te = X_all[te] if cols is None else X_all[te][:, cols]
    return model, info, te, X_te


def run_experiment(dataset, model_spec: ModelSpec, feature_spec: FeatureSpec, plan: SplitPlan,
                   seed: int = 0, threads: int | None = None, inner_k: int = 3,
                   keep_models: bool = False) -> ExperimentResult:
    """Outer participant-disjoint CV: select, tune and fit on training folds only."""
    plan.validate(dataset.participants)
    X_all, names = _feature_matrix(dataset, model_spec, feature_spec)
    n = dataset.n_samples
    proba = np.full(n, np.nan)
    score = np.full(n, np.nan)
    fold_of = np.full(n, -1, dtype=np.int64)
    report = MetricsReport()
    folds, models = [], {}
    for i in range(plan.k):
        entry = {"fold": i, "n_test_participants": len(plan.test(i))}
        fold_models = {}
        selected = None
        if (model_spec.family != "baseline" and feature_spec.mi_fraction < 1.0
                and feature_spec.mi_mode == "independence"):
            # Label-free criterion: one selection serves both tasks.
            tr = dataset.indices_for(plan.train(i))
            selected = select_features(X_all[tr], dataset.label[tr], dataset.total[tr], names, feature_spec,
                                       "classify")
        for task in model_spec.tasks:
            log.info("fold %d/%d %s", i + 1, plan.k, task)
            model, info, te, X_te = fit_fold(dataset, model_spec, feature_spec, plan, i, task, seed, threads,
                                             inner_k, X_all, names, selected)
            pred = model.predict(X_te)
            fold_of[te] = i
            entry["n_test"] = int(len(te))
            if task == "classify":
                proba[te] = pred
                entry.update(_classification_metrics(dataset.label[te], pred))
            else:
                score[te] = pred
                entry.update(_regression_metrics(dataset.total[te], pred))
            entry.setdefault("tuning", {})[task] = info
            fold_models[task] = model
        for key in METRIC_KEYS:
            entry.setdefault(key, None)
        report.per_fold.append({k: entry[k] for k in ("fold", "n_test") + METRIC_KEYS + ("mcc_degenerate",)
                                if k in entry})
        folds.append(entry)
        if keep_models:
            models[i] = fold_models
    provenance = {
        "model_spec": model_spec.to_dict(),
        "feature_spec": feature_spec.to_dict() if model_spec.family != "baseline" else {"inputs": list(BASELINE_INPUTS)},
        "split": plan.to_dict(),
        "seed": int(seed),
        "inner_k": inner_k,
        "chosen_hyperparameters": [
            {task: f["tuning"][task]["hyperparameters"] for task in model_spec.tasks} for f in folds
        ],
    }
    return ExperimentResult(report, folds, provenance, proba, score, fold_of, models)


def ablation_study(dataset, plan: SplitPlan, model_spec: ModelSpec | None = None, seed: int = 0,
                   threads: int | None = None, inner_k: int = 3) -> tuple[list[dict], dict]:
    """One forest experiment per registry group; rows in registry order."""
    model_spec = model_spec or ModelSpec("rf")
    rows, results = [], {}
    for group in registry.GROUPS:
        log.info("ablation: %s", group)
        res = run_experiment(dataset, model_spec, FeatureSpec(group=group), plan, seed, threads, inner_k)
        results[group] = res
        row = {"feature_set": group, "label": registry.GROUP_LABELS[group],
               "n_features": registry.EXPECTED_SIZES[group]}
        for m in METRIC_KEYS:
            row[f"{m}_mean"] = res.metrics.mean(m)
            row[f"{m}_std"] = res.metrics.std(m)
        rows.append(row)
    return rows, results


GENDER_GROUPS = {"female": ("female",), "male_nonbinary": ("male", "nonbinary", "other")}
RACE_GROUPS = {"white": ("white",), "non_white": ("asian", "black", "amer_indian_ak_native", "multiple", "other")}


@dataclass
class SubgroupReport:
    attribute: str
    groups: dict  # group name -> MetricsReport
    definition: dict

    def to_dict(self) -> dict:
        return {
            "attribute": self.attribute,
            "definition": {k: list(v) for k, v in self.definition.items()},
            "groups": {g: r.to_dict() for g, r in self.groups.items()},
        }


def subgroup_metrics(dataset, result: ExperimentResult, attribute: str, definition: dict) -> SubgroupReport:
    """Per-fold metrics on held-out predictions split by a demographic grouping."""
    values = dataset.sample_attribute(attribute)
    groups = {}
    for name, members in definition.items():
        in_group = np.isin(values, members)
        rep = MetricsReport()
        for i in range(int(result.fold_of.max()) + 1 if len(result.fold_of) else 0):
            sel = in_group & (result.fold_of == i)
            entry = {"fold": i, "n_test": int(sel.sum())}
            if sel.sum() == 0:
                entry.update({m: None for m in METRIC_KEYS})
                entry["mcc_degenerate"] = False
            else:
                if not np.all(np.isnan(result.proba[sel])):
                    cls = _classification_metrics(dataset.label[sel], result.proba[sel])
                    entry.update({k: cls[k] for k in ("balanced_accuracy", "mcc", "mcc_degenerate")})
                if not np.all(np.isnan(result.score[sel])):
                    entry.update(_regression_metrics(dataset.total[sel], result.score[sel]))
                for m in METRIC_KEYS:
                    entry.setdefault(m, None)
            rep.per_fold.append(entry)
        groups[name] = rep
    return SubgroupReport(attribute, groups, definition)


def bias_report(dataset, model_spec: ModelSpec, plan: SplitPlan, feature_spec: FeatureSpec | None = None,
                seed: int = 0, threads: int | None = None, inner_k: int = 3, result: ExperimentResult | None = None):
    """Gender (female vs male+nonbinary) and race (white vs non-white) reports."""
    if result is None:
        result = run_experiment(dataset, model_spec, feature_spec or FeatureSpec(), plan, seed, threads, inner_k)
    return {
        "gender": subgroup_metrics(dataset, result, "gender", GENDER_GROUPS),
        "race": subgroup_metrics(dataset, result, "race", RACE_GROUPS),
    }, result


def _fmt(mean, std, digits=2):
    if mean is None:
        return "n/a"
    return f"{mean:.{digits}f} ({std:.{digits}f})" if std is not None and not math.isnan(std) else f"{mean:.{digits}f}"


def metrics_table_rows(named_reports) -> list[dict]:
    rows = []
    for name, rep in named_reports:
        row = {"name": name}
        for m in METRIC_KEYS:
            row[f"{m}_mean"] = rep.mean(m)
            row[f"{m}_std"] = rep.std(m)
        rows.append(row)
    return rows


def format_table(rows, name_key: str = "name") -> str:
    """Aligned text table: name, BA, MCC, MAE, R^2 as mean (std)."""
    header = ["Feature Set" if name_key != "name" else "Name", "Balanced Accuracy", "MCC", "MAE", "R^2"]
    body = []
    for r in rows:
        body.append([
            str(r.get("label", r[name_key])),
            _fmt(r["balanced_accuracy_mean"], r["balanced_accuracy_std"]),
            _fmt(r["mcc_mean"], r["mcc_std"]),
            _fmt(r["mae_mean"], r["mae_std"]),
            _fmt(r["r_squared_mean"], r["r_squared_std"]),
        ])
    widths = [max(len(x[i]) for x in [header] + body) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in body]
    return "\n".join(lines) + "\n"
