import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import cronbach
from phqface.errors import UndefinedMetricError
from phqface.psychometrics import (classify, classify_many, cronbach_alpha, intra_individual_variability,
                                   total_score)


def test_total_and_threshold_boundaries():
    assert total_score([100] * 8) == 800
    assert total_score([0] * 8) == 0
    assert classify(333) == 0 and classify(334) == 1
    assert classify(333.999) == 0
    assert list(classify_many([0, 333, 334, 800])) == [0, 0, 1, 1]


def test_alpha_parallel_items_is_one(rng):
    x = rng.normal(size=300)
    items = np.column_stack([x + c for c in range(8)])
    assert cronbach_alpha(items) == pytest.approx(1.0, abs=1e-12)


def test_alpha_independent_items_near_zero(rng):
    assert abs(cronbach_alpha(rng.normal(size=(10_000, 8)))) < 0.05


@settings(max_examples=50, deadline=None)
@given(st.integers(3, 40), st.integers(2, 9), st.integers(0, 2**31))
def test_alpha_matches_oracle(n, k, seed):
    m = np.random.default_rng(seed).integers(0, 101, size=(n, k)).astype(float)
    if m.sum(axis=1).var() == 0:
        return
    assert cronbach_alpha(m) == pytest.approx(cronbach(m), abs=1e-10)


def test_alpha_degenerate():
    with pytest.raises(UndefinedMetricError):
        cronbach_alpha(np.ones((5, 3)))
    with pytest.raises(UndefinedMetricError):
        cronbach_alpha([[1, 2, 3]])


def test_variability_omits_single_ema():
    rep = intra_individual_variability(["a", "a", "a", "b"], [100, 200, 300, 50])
    assert rep.participant_std == {"a": pytest.approx(100.0)}
    assert rep.omitted == ["b"]
    assert rep.notes
