from dataclasses import replace

import numpy as np
import pytest

from phqface.errors import ConfigError
from phqface.evaluation import make_subject_folds
from phqface.evaluation.experiment import (GENDER_GROUPS, FeatureSpec, ModelSpec, ablation_study, bias_report,
                                           fit_fold, format_table, metrics_table_rows, run_experiment)
from phqface.synth import SynthConfig, generate_cohort

TINY = [{"n_trees": 8, "max_depth": 5, "min_samples_leaf": 3}]


def rf_spec(tasks=("classify", "regress")):
    return ModelSpec("rf", TINY, TINY, tasks=tasks)


@pytest.fixture(scope="module")
def plan(small_dataset):
    return make_subject_folds(small_dataset.participants, 3, seed=4)


def test_specs_validate():
    with pytest.raises(ConfigError):
        ModelSpec("svm")
    with pytest.raises(ConfigError):
        FeatureSpec(group="Mouth")
    with pytest.raises(ConfigError):
        FeatureSpec(mi_fraction=0)
    assert len(ModelSpec("rf").grid("classify")) == 12
    assert ModelSpec("rf", [{"max_depth": 0}]).grid("classify") == [{"max_depth": None}]
    assert ModelSpec("linear").grid("regress")[0] == {"lam": 0.001, "alpha_mix": 0.1}


def test_run_experiment_report(small_dataset, plan):
    res = run_experiment(small_dataset, rf_spec(), FeatureSpec(group="Landmarks3D"), plan, seed=1, keep_models=True)
    m = res.metrics
    assert len(m.per_fold) == 3
    ba = [f["balanced_accuracy"] for f in m.per_fold]
    assert m.mean("balanced_accuracy") == pytest.approx(sum(ba) / 3, abs=1e-12)
    assert m.std("balanced_accuracy") == pytest.approx(np.std(ba, ddof=1), abs=1e-12)
    assert m.mean("balanced_accuracy") > 0.8
    assert np.all(res.fold_of >= 0) and not np.isnan(res.proba).any() and not np.isnan(res.score).any()
    assert np.all((res.score >= 0) & (res.score <= 800))
    assert res.provenance["chosen_hyperparameters"][0]["classify"] == TINY[0]
    assert set(res.models[0]) == {"classify", "regress"}


def test_test_label_noise_leaves_models_identical(small_dataset, plan, rng):
    specs = [
        (rf_spec(), FeatureSpec(group="Landmarks3D")),
        (ModelSpec("linear", [{"l2": 0.1}], [{"lam": 0.1, "alpha_mix": 0.5}]), FeatureSpec(group="HeadPose")),
        (rf_spec(), FeatureSpec(group="Gaze", mi_mode="relevance", mi_fraction=0.5)),
    ]
    for fold in range(plan.k):
        te = small_dataset.indices_for(plan.test(fold))
        total = small_dataset.total.copy()
        total[te] = rng.uniform(0, 800, len(te))
        noisy = replace(small_dataset, total=total, label=(total >= 334).astype(small_dataset.label.dtype))
        for spec, fspec in specs:
            for task in spec.tasks:
                a = fit_fold(small_dataset, spec, fspec, plan, fold, task, seed=2)[0]
                b = fit_fold(noisy, spec, fspec, plan, fold, task, seed=2)[0]
                assert a.to_json() == b.to_json()


def test_single_class_folds_report_missing(small_cohort, plan):
    ds, _, _ = small_cohort.dataset(threshold=0.0)
    with pytest.warns(UserWarning, match="single-class"):
        res = run_experiment(ds, rf_spec(("classify",)), FeatureSpec(group="Gaze"), plan)
    assert all(f["balanced_accuracy"] is None and f["mcc"] is None for f in res.metrics.per_fold)
    assert res.metrics.mean("balanced_accuracy") is None


def test_linear_and_baseline_families(small_dataset, plan):
    lin = run_experiment(small_dataset, ModelSpec("linear", [{"l2": 0.01}], [{"lam": 0.01, "alpha_mix": 0.5}]),
                         FeatureSpec(group="Landmarks3D"), plan)
    assert lin.metrics.mean("balanced_accuracy") > 0.8
    base = run_experiment(small_dataset, ModelSpec("baseline", TINY, TINY), FeatureSpec(), plan)
    assert base.provenance["feature_spec"] == {"inputs": ["gender", "age", "response_duration"]}


def test_mi_selection_fits_on_training_rows(small_dataset, plan):
    _, info, _, X_te = fit_fold(small_dataset, rf_spec(), FeatureSpec(group="FAU", mi_fraction=0.2), plan, 0,
                                "classify")
    assert info["n_features"] == 7 and X_te.shape[1] == 7


def test_ablation_rows(small_dataset, plan):
    rows, _ = ablation_study(small_dataset, plan, rf_spec())
    assert [r["feature_set"] for r in rows] == ["FAU", "Gaze", "EyeLandmarks", "HeadPose", "Rigidity",
                                               "Landmarks2D", "Landmarks3D"]
    best = max(rows, key=lambda r: r["balanced_accuracy_mean"])
    assert best["feature_set"] == "Landmarks3D"
    assert min(rows, key=lambda r: r["mae_mean"])["feature_set"] == "Landmarks3D"
    text = format_table(rows, name_key="feature_set")
    assert text.splitlines()[0].split()[:2] == ["Feature", "Set"] and "3D Landmarks" in text


def test_tuning_prefers_dominating_depth(small_dataset, plan):
    grid = [{"n_trees": 8, "max_depth": 1, "min_samples_leaf": 3}, {"n_trees": 8, "max_depth": 8, "min_samples_leaf": 3}]
    spec = ModelSpec("rf", grid, grid, tasks=("regress",))
    _, info, _, _ = fit_fold(small_dataset, spec, FeatureSpec(group="Landmarks3D"), plan, 0, "regress")
    assert info["grid_index"] == 1


@pytest.fixture(scope="module")
def bias_cohort():
    cfg = SynthConfig(seed=5, n_participants=40, emas_mean=50, emas_std=5, images_per_ema=(5, 5), signal_strength=3.0,
                      item_noise_std=2.0, gender_mix={"female": 0.5, "male": 0.5}, race_mix={"white": 1.0})
    return cfg


def test_bias_report_symmetric_and_asymmetric(bias_cohort):
    spec = ModelSpec("rf", TINY, TINY)
    sym = generate_cohort(bias_cohort).dataset()[0]
    plan = make_subject_folds(sym.participants, 5, 0)
    reports, res = bias_report(sym, spec, plan, FeatureSpec(group="Landmarks3D"))
    g = reports["gender"].groups
    sizes = [sum(f["n_test"] for f in g[k].per_fold) for k in GENDER_GROUPS]
    assert sum(sizes) == sym.n_samples and min(sizes) > 3000
    assert abs(g["female"].mean("balanced_accuracy") - g["male_nonbinary"].mean("balanced_accuracy")) < 0.05
    # every participant is white, so the other race group is empty and reported missing
    assert reports["race"].groups["non_white"].mean("balanced_accuracy") is None
    assert all(f["n_test"] == 0 for f in reports["race"].groups["non_white"].per_fold)

    noisy_cfg = replace(bias_cohort, noise_by_gender={"male": 4.0})
    noisy = generate_cohort(noisy_cfg).dataset()[0]
    reports, _ = bias_report(noisy, spec, plan, FeatureSpec(group="Landmarks3D"))
    g = reports["gender"].groups
    assert g["male_nonbinary"].mean("mae") > g["female"].mean("mae") + 5


def test_metrics_table_rows(small_dataset, plan):
    res = run_experiment(small_dataset, rf_spec(("classify",)), FeatureSpec(group="Gaze"), plan)
    rows = metrics_table_rows([("Gaze", res.metrics)])
    assert rows[0]["mae_mean"] is None
    assert "n/a" in format_table(rows)
