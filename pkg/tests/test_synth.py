import json

import numpy as np
import pytest

from phqface import registry
from phqface.annotations import parse_annotation_file
from phqface.errors import ConfigError
from phqface.features import mutual_information
from phqface.ingest import parse_demographics_file, parse_ema_file, parse_feature_file
from phqface.synth import COHORT_FILES, SynthConfig, generate_cohort, oracle_metrics, write_cohort


def _small(**kw):
    base = dict(seed=3, n_participants=8, emas_mean=10, emas_std=1, n_annotated_images=20)
    base.update(kw)
    return SynthConfig(**base)


def test_same_seed_same_files(tmp_path):
    a = write_cohort(generate_cohort(_small()), tmp_path / "a")
    b = write_cohort(generate_cohort(_small()), tmp_path / "b")
    for name in COHORT_FILES:
        assert open(a[name], "rb").read() == open(b[name], "rb").read(), name


def test_different_seed_differs():
    a = generate_cohort(_small(seed=1))
    b = generate_cohort(_small(seed=2))
    assert not np.array_equal(a.features.values, b.features.values)


def test_written_cohort_parses_back(tmp_path):
    cohort = generate_cohort(_small(attention_failure_rate=0.2))
    paths = write_cohort(cohort, tmp_path)
    ema = parse_ema_file(paths["ema.csv"], strict=True)
    assert not ema.diagnostics and len(ema.records) == len(cohort.emas)
    assert [r.total for r in ema.records] == pytest.approx([r.total for r in cohort.emas], abs=1e-9)
    table, diags = parse_feature_file(paths["features.csv"], strict=True)
    assert not diags and np.allclose(table.values, cohort.features.values)
    demo = parse_demographics_file(paths["demographics.csv"], strict=True)
    assert len(demo.records) == 8
    assert len(parse_annotation_file(paths["annotations.csv"], strict=True)) == len(cohort.annotations)
    truth = json.loads(open(paths["truth.json"]).read())
    assert len(truth["carrier_features"]) == 30
    assert set(truth["carrier_features"]) <= set(registry.group_columns("Landmarks3D"))


def test_attention_failure_rate_realized():
    cohort = generate_cohort(SynthConfig(seed=5, n_participants=50, emas_mean=200, emas_std=0,
                                         attention_failure_rate=0.1, n_annotated_images=0))
    assert len(cohort.emas) == 10_000
    _, _, filt = cohort.dataset(tolerance=25)
    assert abs(filt.exclusion_fraction - 0.1) <= 0.01


def test_zero_signal_has_no_mutual_information():
    cohort = generate_cohort(SynthConfig(seed=8, n_participants=60, emas_mean=150, emas_std=0,
                                         signal_strength=0.0, images_per_ema=(3, 3), n_annotated_images=0))
    ds, _, _ = cohort.dataset()
    col = registry.FEATURE_INDEX[cohort.truth["carrier_features"][0]]
    assert ds.n_samples > 20_000
    assert mutual_information(ds.X[:, col], ds.label) < 0.005


def test_strong_signal_has_mutual_information():
    cohort = generate_cohort(_small(n_participants=30, emas_mean=40, signal_strength=4.0, item_noise_std=2.0))
    ds, _, _ = cohort.dataset()
    col = registry.FEATURE_INDEX[cohort.truth["carrier_features"][0]]
    other = [c for c in range(registry.N_FEATURES) if registry.FEATURE_NAMES[c] not in cohort.truth["carrier_features"]][0]
    assert mutual_information(ds.X[:, col], ds.label) > 10 * mutual_information(ds.X[:, other], ds.label)


def test_label_balance_follows_latent_mean():
    rates = []
    for mean in (300.0, 400.0, 500.0):
        ds, _, _ = generate_cohort(_small(n_participants=40, emas_mean=30, latent_mean=mean)).dataset()
        rates.append(ds.label.mean())
    assert rates[0] < rates[1] < rates[2]


def test_oracle_extremes():
    clean = _small(noise_std=0.0, item_noise_std=0.0, signal_strength=4.0)
    o = oracle_metrics(generate_cohort(clean).truth, clean)
    assert o["balanced_accuracy"] == pytest.approx(1.0, abs=1e-9)
    assert o["mae"] == pytest.approx(0.0, abs=1e-9)
    null = _small(n_participants=30, emas_mean=30, signal_strength=0.0)
    o = oracle_metrics(generate_cohort(null).truth, null)
    assert o["balanced_accuracy"] == pytest.approx(0.5, abs=1e-9)


def test_oracle_improves_with_signal():
    vals = []
    for s in (0.5, 1.0, 4.0):
        cfg = _small(n_participants=30, emas_mean=30, signal_strength=s)
        vals.append(oracle_metrics(generate_cohort(cfg).truth, cfg)["balanced_accuracy"])
    assert vals[0] < vals[1] < vals[2]


def test_oracle_rejects_mismatched_config():
    cfg = _small()
    with pytest.raises(ConfigError):
        oracle_metrics(generate_cohort(cfg).truth, _small(seed=4))


@pytest.mark.parametrize("bad", [
    {"images_per_ema": (0, 2)}, {"signal_carrier": "Nose"}, {"n_carriers": 205}, {"attention_failure_rate": 1.5},
    {"gender_mix": {"robot": 1.0}}, {"ar_coef": 1.0}, {"noise_std": -1},
])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        _small(**bad)


def test_config_round_trip():
    cfg = _small(noise_by_gender={"male": 2.0})
    again = SynthConfig.from_dict(cfg.to_dict())
    assert again == cfg and again.digest() == cfg.digest()
    with pytest.raises(ConfigError):
        SynthConfig.from_dict({**cfg.to_dict(), "colour": 1})
    with pytest.raises(ConfigError):
        SynthConfig(seed=None)


def test_noise_by_gender_scales_noise():
    cfg = _small(n_participants=40, noise_by_gender={"male": 3.0}, gender_mix={"female": 0.5, "male": 0.5})
    truth = generate_cohort(cfg).truth
    noise = {p["gender"]: p["noise_std"] for p in truth["participants"]}
    assert noise == {"female": 1.0, "male": 3.0}
