import csv

import numpy as np
import pytest

from oracles import shapley_enumeration, shapley_permutations, subset_values
from phqface.evaluation import make_subject_folds
from phqface.evaluation.experiment import FeatureSpec, ModelSpec
from phqface.explain import (explain_fold, permutation_importance, top_k_report, tree_shap, tree_shap_values,
                             write_attributions_csv)
from phqface.models import fit_random_forest


def small_forest(rng, p, depth, trees, task="classify"):
    X = np.round(rng.normal(size=(80, p)), 1)
    y = X[:, 0] - X[:, p - 1] + rng.normal(size=80)
    y = (y > 0).astype(float) if task == "classify" else 300 + 50 * y
    return X, fit_random_forest(X, y, task=task, n_trees=trees, max_depth=depth, mtry=p,
                                seed=int(rng.integers(1 << 30)))


def test_enumeration_oracle_agrees_with_permutation_oracle(rng):
    X, rf = small_forest(rng, 4, 3, 2)
    x = X[0]
    tables = [subset_values(t, x, 4) for t in rf.trees]

    def value(S):
        return np.mean([tab[sum(1 << i for i in S)] for tab in tables])

    assert np.allclose(shapley_enumeration(rf.trees, x, 4)[1], shapley_permutations(value, 4), atol=1e-12)


@pytest.mark.parametrize("task", ["classify", "regress"])
def test_tree_shap_exact(rng, task):
    for _ in range(8):
        p = int(rng.integers(1, 7))
        X, rf = small_forest(rng, p, int(rng.integers(1, 4)), int(rng.integers(1, 4)), task)
        pts = np.vstack([X[:3], rng.normal(size=(2, p))])
        base, phi, pred = tree_shap_values(rf, pts)
        for r, x in enumerate(pts):
            b, ref = shapley_enumeration(rf.trees, x, p)
            assert base == pytest.approx(b, abs=1e-12)
            assert np.allclose(phi[r], ref, atol=1e-9)
        assert np.allclose(base + phi.sum(axis=1), pred, atol=1e-9)


def test_single_tree_and_unused_features(rng):
    X = rng.normal(size=(100, 3))
    rf = fit_random_forest(X, (X[:, 0] > 0).astype(float), n_trees=1, max_depth=1, mtry=3, seed=0)
    att = tree_shap(rf.trees[0], X[0])
    assert att.phi[1] == 0 and att.phi[2] == 0
    assert att.base_value + att.phi.sum() == pytest.approx(att.prediction)


def test_top_k_ranking_ties_and_clamp():
    phi = np.array([[0.5, -0.5, 0.1], [0.5, -0.5, -0.1]])
    X = np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    phi = np.array([[0.5, -0.5, 0.1], [-0.5, 0.5, -0.1]])
    rep = top_k_report(phi, X, ["a", "b", "c"], k=2)
    assert rep.names == ["a", "b"]
    assert [f["direction"] for f in rep.features] == [1, -1]
    with pytest.warns(UserWarning, match="clamped"):
        rep = top_k_report(phi, X, ["a", "b", "c"], k=5)
    assert rep.k == 3
    zero = top_k_report(np.zeros((2, 3)), X, ["a", "b", "c"], k=2)
    assert zero.degenerate and zero.names == ["a", "b"]


def test_permutation_importance(rng):
    X = rng.normal(size=(500, 3))
    y = (X[:, 1] > 0).astype(float)
    rf = fit_random_forest(X, y, n_trees=10, seed=0)
    rep = permutation_importance(rf.predict, X, y, "balanced_accuracy", n_repeats=3, seed=0, names=["a", "b", "c"])
    assert rep.names[0] == "b" and rep.features[0]["score"] > 0.3
    again = permutation_importance(rf.predict, X, y, "balanced_accuracy", n_repeats=3, seed=0, names=["a", "b", "c"])
    assert again.to_dict() == rep.to_dict()
    with pytest.raises(ValueError):
        permutation_importance(rf.predict, X, y, n_repeats=0)


def test_explain_fold_finds_carriers(small_cohort, small_dataset, tmp_path):
    plan = make_subject_folds(small_dataset.participants, 3, seed=0)
    spec = ModelSpec("rf", [{"n_trees": 15, "max_depth": 6, "min_samples_leaf": 3}], tasks=("classify",))
    res = explain_fold(small_dataset, spec, FeatureSpec(group="Landmarks3D"), plan, fold=1, max_samples=40,
                       top_k=5, permutation_repeats=1)
    carriers = set(small_cohort.truth["carrier_features"])
    assert len(set(res.ranking.names) & carriers) >= 3
    assert res.local_accuracy_error < 1e-9
    assert res.phi.shape == (40, 204)
    write_attributions_csv(tmp_path / "a.csv", res.sample_ids, res.names, res.phi)
    rows = list(csv.reader(open(tmp_path / "a.csv")))
    assert rows[0] == ["sample_id", "feature", "phi"] and len(rows) == 1 + 40 * 204
