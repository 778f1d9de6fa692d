import warnings

import pytest

from phqface.evaluation.cv import make_subject_folds, nested_tune


def test_fold_sizes():
    plan = make_subject_folds([f"p{i}" for i in range(177)], 5, seed=3)
    assert sorted(len(f) for f in plan.folds) == [35, 35, 35, 36, 36]
    assert [len(f) for f in make_subject_folds(range(10), 5).folds] == [2] * 5


def test_deterministic_and_seed_sensitive():
    pids = [f"p{i}" for i in range(50)]
    assert make_subject_folds(pids, 5, 1) == make_subject_folds(reversed(pids), 5, 1)
    assert make_subject_folds(pids, 5, 1) != make_subject_folds(pids, 5, 2)


def test_train_test_partition():
    plan = make_subject_folds(range(23), 4, 0)
    for i in range(4):
        assert not set(plan.train(i)) & set(plan.test(i))
        assert sorted(plan.train(i) + plan.test(i)) == plan.participants


def test_stratified_deal():
    pids = [f"p{i:02d}" for i in range(20)]
    share = {p: (1.0 if i < 10 else 0.0) for i, p in enumerate(pids)}
    plan = make_subject_folds(pids, 5, 0, stratify=share)
    assert all(sum(share[p] for p in f) == 2 for f in plan.folds)


def test_errors():
    with pytest.raises(ValueError):
        make_subject_folds(range(3), 5)
    with pytest.raises(ValueError):
        nested_tune(range(9), [], lambda *a: 0.0)


def test_tune_picks_best_and_breaks_ties_first():
    grid = [{"v": 1}, {"v": 3}, {"v": 3}, {"v": 2}]
    res = nested_tune(range(9), grid, lambda p, tr, va: float(p["v"]), objective="classify")
    assert res.best_index == 1
    res = nested_tune(range(9), grid, lambda p, tr, va: float(p["v"]), objective="regress")
    assert res.best_index == 0


def test_tune_runs_single_entry_and_inner_folds_disjoint():
    calls = []

    def ev(params, tr, va):
        assert not set(tr) & set(va)
        assert set(tr) | set(va) == {str(i) for i in range(12)}
        calls.append(1)
        return 0.5

    res = nested_tune(range(12), [{"a": 1}], ev, inner_k=3)
    assert res.best == {"a": 1} and len(calls) == 3


def test_tune_skips_undefined_folds():
    seq = iter([None, 0.6, 0.8, 0.9, 0.9, 0.9])
    with pytest.warns(UserWarning, match="skipped"):
        res = nested_tune(range(9), [{"a": 1}, {"a": 2}], lambda *a: next(seq))
    assert res.scores == pytest.approx([0.7, 0.9])
    assert res.best_index == 1
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = nested_tune(range(9), [{"a": 1}], lambda *a: None)
    assert res.best_index == 0
