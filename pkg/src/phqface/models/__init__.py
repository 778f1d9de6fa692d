"""From-scratch predictors and their JSON serialization."""
from __future__ import annotations

import json

import numpy as np

from .forest import RandomForest, Tree, default_mtry, fit_random_forest, oob_prediction
from .linear import ElasticNetModel, LogisticModel, fit_elastic_net, fit_logistic

__all__ = [
    "RandomForest", "Tree", "LogisticModel", "ElasticNetModel", "fit_random_forest", "fit_logistic",
    "fit_elastic_net", "default_mtry", "oob_prediction", "predict", "model_to_json", "model_from_json",
    "fit_baseline", "BASELINE_INPUTS",
]

BASELINE_INPUTS = ("gender", "age", "response_duration")

_KINDS = {"random_forest": RandomForest, "logistic": LogisticModel, "elastic_net": ElasticNetModel}


def predict(model, X) -> np.ndarray:
    """Class-1 probability for classifiers, raw score for regressors."""
    return model.predict(X)


def model_to_json(model) -> str:
    return json.dumps(model.to_dict(), sort_keys=True)


def model_from_json(text: str):
    d = json.loads(text)
    if d.get("format_version") != 1:
        raise ValueError(f"unsupported model format_version {d.get('format_version')!r}")
    return _KINDS[d["kind"]].from_dict(d)


def fit_baseline(dataset, task: str = "classify", seed: int = 0, **hyperparameters) -> RandomForest:
    """Random forest over encoded gender, age and per-EMA response time only."""
    X = dataset.baseline_matrix()
    y = dataset.label if task == "classify" else dataset.total
    return fit_random_forest(X, y, task=task, seed=seed, **hyperparameters)
