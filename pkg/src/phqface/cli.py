"""Command-line entry point: `phqface <command> [flags]`.

Exit codes: 0 success, 1 usage or configuration error, 2 data validation
failure, 3 runtime or numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, registry
from .annotations import annotation_summary, format_summary_text, parse_annotation_file, save_distribution_csv
from .config import RunConfig, format_defaults, format_toml
from .errors import ConfigError, DataValidationError, PhqFaceError
from .evaluation import make_subject_folds
from .evaluation.experiment import ablation_study, bias_report, format_table, metrics_table_rows, run_experiment
from .explain import explain_fold, write_attributions_csv, write_ranking_json
from .ingest import (Dataset, attention_filter, check_feature_header, join_dataset, parse_demographics_file,
                     parse_ema_file, parse_feature_file)
from .psychometrics import reliability_report
from .synth import generate_cohort, oracle_metrics, write_cohort

log = logging.getLogger("phqface")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3
COMMANDS = ("ingest", "validate", "experiment", "ablate", "explain", "bias", "annotations", "synth", "report")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _jsonable(obj):
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def dumps(obj, indent=2) -> str:
    return json.dumps(obj, indent=indent, sort_keys=True, default=_jsonable)


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj) + "\n", encoding="utf-8")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _hash_inputs(paths: dict) -> dict:
    out = {}
    for name, p in sorted(paths.items()):
        p = Path(p)
        if p.is_dir():
            for f in sorted(p.iterdir()):
                if f.is_file():
                    out[f"{name}/{f.name}"] = sha256_file(f)
        else:
            out[name] = sha256_file(p)
    return out


def write_manifest(out: Path, command: str, cfg: RunConfig, inputs: dict, extra: dict | None = None) -> dict:
    """Deterministic record of a run: settings, input and output hashes, no clock data."""
    outputs = {f.name: sha256_file(f) for f in sorted(out.iterdir()) if f.is_file() and f.name != "manifest.json"}
    for sub in sorted(p for p in out.iterdir() if p.is_dir()):
        for f in sorted(sub.rglob("*")):
            if f.is_file():
                outputs[str(f.relative_to(out))] = sha256_file(f)
    manifest = {
        "command": command,
        "package_version": __version__,
        "config": cfg.echo(),
        "inputs": inputs,
        "outputs": outputs,
    }
    if extra:
        manifest.update(extra)
    write_json(out / "manifest.json", manifest)
    return manifest


def _write_rows_csv(path, rows, fields=None) -> None:
    fields = fields or (list(rows[0]) if rows else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else (repr(r[k]) if isinstance(r.get(k), float) else r[k]))
                        for k in fields})


def _threads(cfg: RunConfig):
    n = int(cfg["run"]["threads"]) or (os.cpu_count() or 1)
    try:
        import numba
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    except (ImportError, ValueError):
        pass
    return n


def _ingest(cfg: RunConfig, strict: bool | None = None):
    """Parse, filter and join raw files; returns dataset, drop report, filter result, diagnostics, inputs."""
    strict = cfg["ingest"]["strict"] if strict is None else strict
    paths = cfg.require_paths("ema", "features", "demographics")
    ema = parse_ema_file(paths["ema"], strict=strict)
    demo = parse_demographics_file(paths["demographics"], strict=strict)
    feats, feat_diag = parse_feature_file(paths["features"], strict=strict)
    filt = attention_filter(ema.records, float(cfg["ingest"]["tolerance"]))
    ds, drops = join_dataset(filt.kept, feats, demo.records, filt.excluded,
                             threshold=float(cfg["ingest"]["threshold"]), strict=strict)
    diagnostics = {
        "ema": [str(d) for d in ema.diagnostics],
        "demographics": [str(d) for d in demo.diagnostics],
        "features": [str(d) for d in feat_diag],
    }
    return ds, drops, filt, ema.records, diagnostics, _hash_inputs(paths)


def _dataset(cfg: RunConfig):
    if cfg["paths"]["dataset"]:
        paths = cfg.require_paths("dataset")
        ds = Dataset.load(paths["dataset"])
        thr = ds.provenance.get("label_threshold")
        if thr is not None and float(thr) != float(cfg["ingest"]["threshold"]):
            raise ConfigError(f"dataset was labeled at threshold {thr}, config asks for {cfg['ingest']['threshold']}")
        return ds, _hash_inputs(paths)
    ds, _, _, _, _, inputs = _ingest(cfg)
    return ds, inputs


def _plan(cfg: RunConfig, ds: Dataset):
    stratify = None
    if cfg["split"]["stratify"]:
        share = {}
        for p in ds.participants:
            share[p] = float(ds.label[ds.participant_id == p].mean())
        stratify = share
    return make_subject_folds(ds.participants, int(cfg["split"]["k"]), cfg.seed, stratify)


def _summary_metrics(report) -> dict:
    return {m: {"mean": v["mean"], "std": v["std"]} for m, v in report.summary().items()}


# -- commands -----------------------------------------------------------------

def cmd_ingest(cfg, out: Path, args) -> dict:
    ds, drops, filt, records, diagnostics, inputs = _ingest(cfg)
    ds.save(out / "dataset")
    rel = reliability_report(records)
    report = {
        "provenance": ds.provenance,
        "drops": drops.to_dict(),
        "attention": {"tolerance": float(cfg["ingest"]["tolerance"]), "excluded": len(filt.excluded),
                      "exclusion_fraction": filt.exclusion_fraction},
        "reliability": rel.to_dict(),
        "diagnostics": {k: len(v) for k, v in diagnostics.items()},
        "label_balance": float(ds.label.mean()) if ds.n_samples else None,
        "dataset_hash": ds.content_hash(),
    }
    write_json(out / "ingest_report.json", report)
    with open(out / "diagnostics.txt", "w", encoding="utf-8") as fh:
        for k, v in diagnostics.items():
            for line in v:
                fh.write(f"{k}: {line}\n")
    write_manifest(out, "ingest", cfg, inputs, {"dataset_hash": ds.content_hash()})
    return {"samples": ds.n_samples, "participants": len(ds.participants),
            "exclusion_fraction": filt.exclusion_fraction, "cronbach_alpha": rel.cronbach_alpha}


def cmd_validate(cfg, out: Path, args) -> dict:
    """Schema and row checks; any problem means exit 2."""
    problems, checked = {}, {}
    for key in ("ema", "features", "demographics", "annotations"):
        path = cfg["paths"][key]
        if not path:
            continue
        if not Path(path).exists():
            raise ConfigError(f"paths.{key} does not exist: {path}")
        checked[key] = path
        try:
            if key == "ema":
                diags = [str(d) for d in parse_ema_file(path).diagnostics]
            elif key == "demographics":
                diags = [str(d) for d in parse_demographics_file(path).diagnostics]
            elif key == "features":
                with open(path, newline="", encoding="utf-8") as fh:
                    header = next(csv.reader(fh), [])
                check_feature_header(header)
                diags = [str(d) for d in parse_feature_file(path)[1]]
            else:
                parse_annotation_file(path, strict=True)
                diags = []
        except DataValidationError as exc:
            diags = [str(exc)]
        if diags:
            problems[key] = diags
    if not checked:
        raise ConfigError("nothing to validate: set at least one of --ema/--features/--demographics/--annotations")
    report = {"checked": sorted(checked), "problems": problems, "valid": not problems}
    write_json(out / "validation.json", report)
    write_manifest(out, "validate", cfg, _hash_inputs(checked))
    if problems:
        first = next(iter(problems.items()))
        raise DataValidationError(f"{first[0]}: {first[1][0]}" + (f" (+{sum(map(len, problems.values())) - 1} more)"
                                                                 if sum(map(len, problems.values())) > 1 else ""))
    return report


def _save_models(out: Path, result) -> None:
    mdir = out / "models"
    mdir.mkdir(exist_ok=True)
    for fold, models in sorted(result.models.items()):
        for task, m in sorted(models.items()):
            (mdir / f"fold{fold}_{task}.json").write_text(m.to_json() + "\n", encoding="utf-8")


def _save_predictions(out: Path, ds, result) -> None:
    with open(out / "predictions.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "participant_id", "fold", "label", "total", "proba", "predicted_total"])
        for i in np.flatnonzero(result.fold_of >= 0):
            w.writerow([ds.image_id[i], ds.participant_id[i], int(result.fold_of[i]), int(ds.label[i]),
                        repr(float(ds.total[i])),
                        "" if np.isnan(result.proba[i]) else repr(float(result.proba[i])),
                        "" if np.isnan(result.score[i]) else repr(float(result.score[i]))])


def cmd_experiment(cfg, out: Path, args) -> dict:
    ds, inputs = _dataset(cfg)
    plan = _plan(cfg, ds)
    threads = _threads(cfg)
    res = run_experiment(ds, cfg.model_spec(), cfg.feature_spec(), plan, cfg.seed, threads,
                         int(cfg["split"]["inner_k"]), keep_models=not args.no_models)
    write_json(out / "metrics.json", res.to_dict())
    _write_rows_csv(out / "folds.csv", res.metrics.per_fold,
                    ["fold", "n_test", "balanced_accuracy", "mcc", "mcc_degenerate", "mae", "r_squared"])
    name = cfg["features"]["set"] if cfg["model"]["family"] != "baseline" else "baseline"
    rows = metrics_table_rows([(name, res.metrics)])
    _write_rows_csv(out / "table.csv", rows)
    (out / "table.txt").write_text(format_table(rows), encoding="utf-8")
    _save_predictions(out, ds, res)
    if not args.no_models:
        _save_models(out, res)
    write_manifest(out, "experiment", cfg, inputs, {"dataset_hash": ds.content_hash()})
    return _summary_metrics(res.metrics)


def cmd_ablate(cfg, out: Path, args) -> dict:
    ds, inputs = _dataset(cfg)
    plan = _plan(cfg, ds)
    rows, results = ablation_study(ds, plan, cfg.model_spec(), cfg.seed, _threads(cfg), int(cfg["split"]["inner_k"]))
    _write_rows_csv(out / "ablation.csv", rows)
    (out / "ablation.txt").write_text(format_table(rows, name_key="feature_set"), encoding="utf-8")
    write_json(out / "ablation.json", {g: r.to_dict() for g, r in results.items()})
    write_manifest(out, "ablate", cfg, inputs, {"dataset_hash": ds.content_hash()})
    return {"rows": [{"feature_set": r["feature_set"], "balanced_accuracy": r["balanced_accuracy_mean"],
                      "mae": r["mae_mean"]} for r in rows]}


def cmd_explain(cfg, out: Path, args) -> dict:
    ds, inputs = _dataset(cfg)
    plan = _plan(cfg, ds)
    e = cfg["explain"]
    res = explain_fold(ds, cfg.model_spec(), cfg.feature_spec(), plan, int(e["fold"]), e["task"], cfg.seed,
                       _threads(cfg), int(cfg["split"]["inner_k"]), int(e["max_samples"]), int(e["top_k"]),
                       int(e["permutation_repeats"]))
    write_attributions_csv(out / "attributions.csv", res.sample_ids, res.names, res.phi)
    extra = {"base_value": res.base_value, "fold": int(e["fold"]), "task": e["task"], "tuning": res.tuning,
             "n_samples": int(len(res.sample_ids)), "local_accuracy_max_error": res.local_accuracy_error,
             "feature_groups": {f["name"]: registry.FEATURE_GROUP.get(f["name"], "baseline")
                                for f in res.ranking.features}}
    write_ranking_json(out / "ranking.json", res.ranking, extra)
    if res.permutation is not None:
        write_ranking_json(out / "permutation.json", res.permutation)
    write_manifest(out, "explain", cfg, inputs, {"dataset_hash": ds.content_hash()})
    return {"top_k": res.ranking.names, "local_accuracy_max_error": res.local_accuracy_error}


def cmd_bias(cfg, out: Path, args) -> dict:
    ds, inputs = _dataset(cfg)
    plan = _plan(cfg, ds)
    reports, _ = bias_report(ds, cfg.model_spec(), plan, cfg.feature_spec(), cfg.seed, _threads(cfg),
                             int(cfg["split"]["inner_k"]))
    write_json(out / "bias.json", {k: r.to_dict() for k, r in reports.items()})
    rows = []
    for attr, rep in reports.items():
        for row in metrics_table_rows(rep.groups.items()):
            rows.append({"attribute": attr, **row})
    _write_rows_csv(out / "bias.csv", rows)
    (out / "bias.txt").write_text(format_table(rows), encoding="utf-8")
    write_manifest(out, "bias", cfg, inputs, {"dataset_hash": ds.content_hash()})
    return {attr: {g: _summary_metrics(r) for g, r in rep.groups.items()} for attr, rep in reports.items()}


def cmd_annotations(cfg, out: Path, args) -> dict:
    paths = cfg.require_paths("annotations")
    ann = parse_annotation_file(paths["annotations"], strict=bool(cfg["ingest"]["strict"]))
    summary = annotation_summary(ann)
    write_json(out / "annotations.json", summary)
    (out / "annotations.txt").write_text(format_summary_text(summary), encoding="utf-8")
    for char, entry in summary.items():
        if entry.get("distribution"):
            save_distribution_csv(entry["distribution"], out / f"distribution_{char}.csv")
    write_manifest(out, "annotations", cfg, _hash_inputs(paths))
    return {c: {"vqa_accuracy": e.get("vqa_accuracy"), "kappa": e.get("kappa")} for c, e in summary.items()}


def cmd_synth(cfg, out: Path, args) -> dict:
    scfg = cfg.synth_config()
    cohort = generate_cohort(scfg)
    write_cohort(cohort, out)
    oracle = oracle_metrics(cohort.truth, scfg, float(cfg["ingest"]["threshold"]))
    write_json(out / "oracle.json", oracle)
    # A ready-to-use config for downstream commands on this cohort.
    follow = cfg.echo()
    follow["paths"].update({"ema": "ema.csv", "features": "features.csv", "demographics": "demographics.csv",
                            "annotations": "annotations.csv", "truth": "truth.json", "dataset": ""})
    follow["run"] = {"seed": cfg.seed}
    (out / "run.toml").write_text(format_toml(follow), encoding="utf-8")
    write_manifest(out, "synth", cfg, {})
    return {"emas": len(cohort.emas), "images": len(cohort.features), "oracle": oracle}


def cmd_report(cfg, out: Path, args) -> dict:
    """Print centralized defaults and the effective settings; collect tables found in --out."""
    text = "# defaults\n" + format_defaults() + "\n# effective\n" + format_toml(cfg.echo())
    found = {}
    if out.exists():
        for name in ("table.txt", "ablation.txt", "bias.txt", "annotations.txt"):
            for p in sorted(out.rglob(name)):
                found[str(p.relative_to(out))] = p.read_text(encoding="utf-8")
    if found:
        text += "\n" + "\n".join(f"## {k}\n{v}" for k, v in sorted(found.items()))
    sys.stderr.write(text if text.endswith("\n") else text + "\n")
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(text, encoding="utf-8")
    return {"defaults": json.loads(dumps(cfg.echo())), "tables": sorted(found)}


HANDLERS = {
    "ingest": cmd_ingest, "validate": cmd_validate, "experiment": cmd_experiment, "ablate": cmd_ablate,
    "explain": cmd_explain, "bias": cmd_bias, "annotations": cmd_annotations, "synth": cmd_synth,
    "report": cmd_report,
}

HELP = {
    "ingest": "parse, attention-filter and join study files into a dataset directory",
    "validate": "check file schemas and rows; exit 2 on any problem",
    "experiment": "cross-validated run of one model/feature configuration",
    "ablate": "random-forest run for each of the 7 feature sets",
    "explain": "TreeSHAP attributions and top-k features for one outer fold",
    "bias": "held-out metrics split by gender and race groups",
    "annotations": "label distributions, VQA accuracy and annotator kappa",
    "synth": "generate a synthetic cohort with known ground truth",
    "report": "print centralized defaults, effective settings and collected tables",
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("common options")
    g.add_argument("--config", help="TOML run configuration")
    g.add_argument("--out", help="output directory (default: <run.out>/<command>)")
    g.add_argument("--seed", type=int, help="master seed for splits, models and synthesis")
    g.add_argument("--threads", type=int, help="worker threads (default: all cores)")
    g.add_argument("--tolerance", type=float, help="attention-check tolerance on the 0-100 item scale")
    g.add_argument("--threshold", type=float, help="PHQ total cutoff for the depressed label")
    g.add_argument("--feature-set", help="all or one of: " + ", ".join(registry.GROUPS))
    g.add_argument("--mi-mode", choices=("independence", "relevance"))
    g.add_argument("--mi-fraction", type=float, help="fraction of features kept by MI selection, in (0, 1]")
    g.add_argument("--model", choices=("rf", "linear", "baseline"))
    g.add_argument("--folds", type=int, help="outer cross-validation folds")
    g.add_argument("--strict", action="store_true", default=None, help="treat any bad row as fatal")
    g.add_argument("--ema", help="EMA responses CSV")
    g.add_argument("--features", help="per-image feature CSV")
    g.add_argument("--demographics", help="participant demographics CSV")
    g.add_argument("--annotations", help="image annotation CSV")
    g.add_argument("--dataset", help="dataset directory written by `ingest`")
    g.add_argument("-v", "--verbose", action="store_true", help="progress logging on stderr")

    parser = _Parser(prog="phqface", description="Depression screening from facial features: data, models, reports.")
    parser.add_argument("--version", action="version", version=f"phqface {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common], help=HELP[name], description=HELP[name])
        if name == "experiment":
            p.add_argument("--no-models", action="store_true", help="skip writing fitted model JSON")
        if name == "explain":
            p.add_argument("--fold", type=int, help="outer fold to explain")
            p.add_argument("--top-k", type=int, help="number of ranked features")
            p.add_argument("--max-samples", type=int, help="held-out samples to attribute")
    return parser


def _resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    cfg.override("run", "seed", args.seed)
    cfg.override("run", "threads", args.threads)
    cfg.override("ingest", "tolerance", args.tolerance)
    cfg.override("ingest", "threshold", args.threshold)
    cfg.override("ingest", "strict", args.strict)
    cfg.override("features", "set", args.feature_set)
    cfg.override("features", "mi_mode", args.mi_mode)
    cfg.override("features", "mi_fraction", args.mi_fraction)
    cfg.override("model", "family", args.model)
    cfg.override("split", "k", args.folds)
    for key in ("ema", "features", "demographics", "annotations", "dataset"):
        cfg.override("paths", key, getattr(args, key))
    for key in ("fold", "top_k", "max_samples"):
        cfg.override("explain", key, getattr(args, key, None))
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if not args.command:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _resolve_config(args)
        out = Path(args.out) if args.out else Path(cfg["run"]["out"]) / args.command
        out.mkdir(parents=True, exist_ok=True)
        summary = HANDLERS[args.command](cfg, out, args)
    except (ConfigError, UsageError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except DataValidationError as exc:
        sys.stderr.write(f"data validation failed: {exc}\n")
        return EXIT_DATA
    except (PhqFaceError, ArithmeticError, ValueError, np.linalg.LinAlgError, MemoryError) as exc:
        sys.stderr.write(f"runtime failure: {exc}\n")
        return EXIT_RUNTIME
    sys.stdout.write(dumps({"command": args.command, "out": str(out), "summary": summary}) + "\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
