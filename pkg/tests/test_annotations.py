import pytest

from oracles import kappa
from phqface.annotations import (CharacteristicAnnotation, annotation_summary, background_frequencies, cohen_kappa,
                                 distribution_report, parse_annotation_file, vqa_agreement_accuracy,
                                 write_annotation_file)
from phqface.errors import SchemaError, UndefinedMetricError


def test_kappa_fixtures():
    a = list("yyyyyyyyyynnnnnnnnnn")
    assert cohen_kappa(a, a) == 1.0
    assert cohen_kappa(list("yynn"), list("ynyn")) == 0.0
    b = list("yyyyyyynnnyyynnnnnnn")
    assert cohen_kappa(a, b) == pytest.approx(0.4, abs=1e-12)


def test_kappa_matches_oracle(rng):
    for _ in range(100):
        n = int(rng.integers(2, 60))
        a = [str(v) for v in rng.integers(0, 4, n)]
        b = [str(v) for v in rng.integers(0, 4, n)]
        try:
            got = cohen_kappa(a, b)
        except UndefinedMetricError:
            continue
        assert got == pytest.approx(kappa(a, b), abs=1e-12)


def test_kappa_constant_raters():
    with pytest.raises(UndefinedMetricError):
        cohen_kappa(["x"] * 4, ["x"] * 4)
    assert cohen_kappa(["x"] * 4, ["x"] * 4, perfect_convention=True) == 1.0
    with pytest.raises(ValueError):
        cohen_kappa(["x"], [])


def test_vqa_accuracy_is_mean_over_annotators():
    assert vqa_agreement_accuracy("aab", "aaa", "aab") == pytest.approx((2 / 3 + 1) / 2)


def _ann(labels, char="lighting"):
    return [CharacteristicAnnotation(f"i{i}", char, "vqa", lab) for i, lab in enumerate(labels)]


def test_distribution_percentages_and_other():
    rows = distribution_report(_ann(["well lit"] * 5 + ["dimly lit"] * 2 + ["neon"]), "lighting")
    assert rows[0] == {"label": "well lit", "count": 5, "percentage": 62.5, "flagged": False}
    assert {r["label"] for r in rows} == {"well lit", "dimly lit", "other"}
    assert [r for r in rows if r["label"] == "other"][0]["flagged"]
    assert sum(r["percentage"] for r in rows) == pytest.approx(100.0, abs=0.01)
    with pytest.raises(ValueError):
        distribution_report([], "lighting")


def test_roundtrip_and_summary(tmp_path, small_cohort):
    p = tmp_path / "a.csv"
    write_annotation_file(small_cohort.annotations, p)
    back = parse_annotation_file(p)
    assert back == small_cohort.annotations
    summary = annotation_summary(back)
    assert summary["lighting"]["n_aligned"] == 40
    assert 0 <= summary["angle"]["vqa_accuracy"] <= 1
    assert background_frequencies(back)[0]["count"] >= background_frequencies(back)[-1]["count"]


def test_bad_header(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("image,label\n")
    with pytest.raises(SchemaError):
        parse_annotation_file(p)
