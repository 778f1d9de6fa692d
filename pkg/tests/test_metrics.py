
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from phqface.errors import DegenerateMetricWarning, UndefinedMetricError
from phqface.evaluation.metrics import (ConfusionMatrix, balanced_accuracy, mae, mcc, mcc_with_flag, r_squared,
                                        score_predictions)


def test_worked_examples():
    cm = ConfusionMatrix(tp=40, tn=30, fp=20, fn=10)
    assert balanced_accuracy(cm) == pytest.approx(0.7, abs=1e-15)
    assert mcc(cm) == pytest.approx(1000 / np.sqrt(60 * 50 * 50 * 40), abs=1e-15)
    assert balanced_accuracy(ConfusionMatrix(50, 50, 0, 0)) == 1.0
    assert mae([334, 100], [234, 200]) == 100.0
    y = np.array([1.0, 2.0, 3.0])
    assert r_squared(y, y) == 1.0
    assert r_squared(y, np.full(3, 2.0)) == 0.0
    assert r_squared(y, 2 * y.mean() - y) == pytest.approx(-3.0)


def test_degenerate_conventions():
    with pytest.raises(UndefinedMetricError):
        balanced_accuracy(ConfusionMatrix(0, 10, 5, 0))
    assert mcc_with_flag(ConfusionMatrix(tp=60, tn=0, fp=0, fn=40)) == (0.0, True)
    with pytest.warns(DegenerateMetricWarning):
        assert mcc(ConfusionMatrix(60, 0, 0, 40)) == 0.0
    with pytest.raises(UndefinedMetricError):
        r_squared([5, 5], [1, 2])
    with pytest.raises(ValueError):
        mae([1, 2], [1])
    with pytest.raises(ValueError):
        mae([], [])
    with pytest.raises(ValueError):
        ConfusionMatrix(-1, 0, 0, 0)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 40), st.integers(0, 40), st.integers(0, 40), st.integers(0, 40))
def test_against_definitional_oracles(tp, tn, fp, fn):
    cm = ConfusionMatrix(tp, tn, fp, fn)
    y, p = oracles.label_vectors(tp, tn, fp, fn)
    assert ConfusionMatrix.from_labels(y, p) == cm
    if tp + fn and tn + fp:
        assert balanced_accuracy(cm) == pytest.approx(oracles.balanced_accuracy(y, p), abs=1e-12)
    ref = oracles.pearson(y, p) if y else None
    got, flag = mcc_with_flag(cm)
    assert flag == (ref is None)
    assert got == pytest.approx(0.0 if ref is None else ref, abs=1e-12)


def test_coin_flip_ba(rng):
    y = rng.permutation(np.repeat([0, 1], 5000))
    p = rng.integers(0, 2, 10_000)
    assert abs(balanced_accuracy(ConfusionMatrix.from_labels(y, p)) - 0.5) < 0.02


def test_constant_mean_predictor_mae(rng):
    y = rng.uniform(0, 800, 200_000)
    assert mae(y, np.full_like(y, 400.0)) == pytest.approx(200.0, rel=0.01)


def test_invariances(rng):
    y = rng.integers(0, 2, 300)
    p = rng.integers(0, 2, 300)
    cm = ConfusionMatrix.from_labels(y, p)
    cm3 = ConfusionMatrix.from_labels(np.tile(y, 3), np.tile(p, 3))
    assert balanced_accuracy(cm3) == pytest.approx(balanced_accuracy(cm), abs=1e-15)
    assert mcc(ConfusionMatrix.from_labels(y, 1 - p)) == pytest.approx(-mcc(cm), abs=1e-12)
    t, q = rng.normal(size=50), rng.normal(size=50)
    assert mae(t + 7.5, q + 7.5) == pytest.approx(mae(t, q), abs=1e-12)


def test_score_predictions_thresholds_probabilities():
    assert score_predictions("balanced_accuracy", [0, 1, 1], [0.2, 0.5, 0.9]) == 1.0
    assert score_predictions("balanced_accuracy", [0, 1, 1], [0.2, 0.5, 0.9], threshold=0.6) == 0.75
    with pytest.raises(ValueError):
        score_predictions("auc", [0], [0])
