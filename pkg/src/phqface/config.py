"""Run configuration: TOML file, centralized defaults and flag overrides."""
from __future__ import annotations

import copy
import json
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import registry
from .errors import ConfigError
from .evaluation.experiment import FAMILIES, FeatureSpec, ModelSpec
from .features import MI_MODES
from .psychometrics import PHQ_THRESHOLD
from .synth import SynthConfig

# Every numeric default lives here; `report` prints this table.
DEFAULTS = {
    "run": {"seed": 0, "out": "runs", "threads": 0},
    "paths": {"ema": "", "features": "", "demographics": "", "annotations": "", "dataset": "", "truth": ""},
    "ingest": {"tolerance": 25.0, "threshold": PHQ_THRESHOLD, "strict": False},
    "features": {"set": "all", "mi_mode": "independence", "mi_fraction": 1.0, "bins": 10},
    "model": {"family": "rf", "tasks": ["classify", "regress"], "class_weight": "",
              "classify_grid": [], "regress_grid": []},
    "split": {"k": 5, "inner_k": 3, "stratify": False},
    "explain": {"fold": 0, "task": "classify", "top_k": 10, "max_samples": 500, "permutation_repeats": 0},
    "synth": {k: v for k, v in SynthConfig(seed=0).to_dict().items() if k != "seed"},
}


_FREE_TABLES = ("gender_mix", "race_mix", "noise_by_gender")


def _merge(base: dict, update: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in update.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where + key!r}")
        if isinstance(base[key], dict) and key not in _FREE_TABLES:
            if not isinstance(val, dict):
                raise ConfigError(f"config key {where + key!r} must be a table")
            out[key] = _merge(base[key], val, f"{where}{key}.")
        else:
            out[key] = copy.deepcopy(val)
    return out


class RunConfig:
    """Effective settings for one command: defaults < file < flags."""

    def __init__(self, data: dict | None = None, source: str | None = None):
        self.data = _merge(DEFAULTS, data or {})
        self.source = source
        self._check()

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = tomllib.loads(p.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {p}: {exc}") from exc
        cfg = cls(data, str(p))
        base = p.parent
        # Relative input paths resolve against the config file's directory.
        for key, val in cfg.data["paths"].items():
            if val and not Path(val).is_absolute():
                cfg.data["paths"][key] = str(base / val)
        return cfg

    def override(self, section: str, key: str, value) -> None:
        if value is None:
            return
        if key not in self.data[section]:
            raise ConfigError(f"unknown config key {section}.{key}")
        self.data[section][key] = value
        self._check()

    def __getitem__(self, section: str) -> dict:
        return self.data[section]

    def _check(self) -> None:
        d = self.data
        if not 0.0 <= float(d["ingest"]["tolerance"]) <= 100.0:
            raise ConfigError("ingest.tolerance must be in [0, 100]")
        if not 0.0 <= float(d["ingest"]["threshold"]) <= 800.0:
            raise ConfigError("ingest.threshold must be in [0, 800]")
        fs = d["features"]["set"]
        if fs != "all" and fs not in registry.GROUPS:
            raise ConfigError(f"features.set must be 'all' or one of {', '.join(registry.GROUPS)}")
        if d["features"]["mi_mode"] not in MI_MODES:
            raise ConfigError(f"features.mi_mode must be one of {MI_MODES}")
        if not 0.0 < float(d["features"]["mi_fraction"]) <= 1.0:
            raise ConfigError("features.mi_fraction must be in (0, 1]")
        if d["model"]["family"] not in FAMILIES:
            raise ConfigError(f"model.family must be one of {FAMILIES}")
        if int(d["split"]["k"]) < 2 or int(d["split"]["inner_k"]) < 2:
            raise ConfigError("split.k and split.inner_k must be >= 2")
        if int(d["run"]["threads"]) < 0:
            raise ConfigError("run.threads must be >= 0")

    @property
    def seed(self) -> int:
        return int(self.data["run"]["seed"])

    def model_spec(self) -> ModelSpec:
        m = self.data["model"]
        return ModelSpec(
            family=m["family"],
            classify_grid=m["classify_grid"] or None,
            regress_grid=m["regress_grid"] or None,
            tasks=tuple(m["tasks"]),
            class_weight=m["class_weight"] or None,
        )

    def feature_spec(self) -> FeatureSpec:
        f = self.data["features"]
        return FeatureSpec(group=f["set"], mi_mode=f["mi_mode"], mi_fraction=float(f["mi_fraction"]),
                           bins=int(f["bins"]))

    def synth_config(self) -> SynthConfig:
        return SynthConfig.from_dict({**self.data["synth"], "seed": self.seed})

    def require_paths(self, *keys) -> dict:
        out = {}
        for key in keys:
            val = self.data["paths"][key]
            if not val:
                raise ConfigError(f"paths.{key} is not set")
            if not Path(val).exists():
                raise ConfigError(f"paths.{key} does not exist: {val}")
            out[key] = val
        return out

    def echo(self) -> dict:
        """Settings recorded in manifests; thread count is excluded since it never changes results."""
        d = copy.deepcopy(self.data)
        d["run"].pop("threads", None)
        d["run"].pop("out", None)
        return d

    def to_json(self) -> str:
        return json.dumps(self.echo(), indent=2, sort_keys=True)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, dict):
        return "{" + ", ".join(f"{k} = {_toml_value(x)}" for k, x in v.items()) + "}"
    raise TypeError(f"cannot render {type(v).__name__}")


def format_toml(data: dict) -> str:
    """Render settings as a TOML document that loads back to the same values."""
    lines = []
    for section, values in data.items():
        lines.append(f"[{section}]")
        lines += [f"{key} = {_toml_value(val)}" for key, val in values.items()]
        lines.append("")
    return "\n".join(lines)


def format_defaults() -> str:
    return format_toml(DEFAULTS)
