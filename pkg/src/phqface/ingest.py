"""Parsing, validation, attention filtering and joining of study files."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import zipfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np
import pandas as pd

from . import registry
from .errors import DataValidationError, SchemaError
from .psychometrics import PHQ_THRESHOLD, classify_many

log = logging.getLogger(__name__)

EMA_COLUMNS = (
    ["participant_id", "session_id", "timestamp"]
    + [f"q{i}" for i in range(1, 9)]
    + ["attn_index", "attn_score", "duration_s"]
)
DEMOGRAPHIC_COLUMNS = ["participant_id", "gender", "race", "age"]
GENDERS = ("female", "male", "nonbinary", "other")
RACES = ("white", "asian", "black", "amer_indian_ak_native", "multiple", "other")
DEFAULT_TOLERANCE = 25.0


@dataclass(frozen=True)
class EmaRecord:
    participant_id: str
    session_id: str
    timestamp: float
    item_scores: tuple[float, ...]
    attention_index: int
    reversed_score: float
    response_duration: float

    @property
    def total(self) -> float:
        return float(sum(self.item_scores))

    @property
    def discrepancy(self) -> float:
        return abs(self.item_scores[self.attention_index] - (100.0 - self.reversed_score))


@dataclass(frozen=True)
class Demographics:
    participant_id: str
    gender: str
    race: str
    age: float


@dataclass(frozen=True)
class RowDiagnostic:
    row: int  # 1-based data row, header excluded
    message: str

    def __str__(self):
        return f"row {self.row}: {self.message}"


@dataclass
class ParseResult:
    records: list
    diagnostics: list[RowDiagnostic] = field(default_factory=list)


def _open_text(source):
    if isinstance(source, (str, Path)):
        return open(source, newline="", encoding="utf-8")
    return source


def _check_header(header, expected, what):
    if header is None:
        raise SchemaError(f"{what}: empty file")
    header = [h.strip() for h in header]
    if header != list(expected):
        missing = [c for c in expected if c not in header]
        extra = [c for c in header if c not in expected]
        raise SchemaError(
            f"{what}: header mismatch (missing: {missing or 'none'}; unexpected: {extra or 'none'})"
        )


def _finite(text, name):
    try:
        v = float(text)
    except (TypeError, ValueError):
        raise ValueError(f"{name}={text!r} is not a number")
    if not math.isfinite(v):
        raise ValueError(f"{name}={text!r} is not finite")
    return v


def _parse_ema_row(row: dict) -> EmaRecord:
    pid = (row["participant_id"] or "").strip()
    sid = (row["session_id"] or "").strip()
    if not pid or not sid:
        raise ValueError("participant_id and session_id must be non-empty")
    scores = []
    for i in range(1, 9):
        v = _finite(row[f"q{i}"], f"q{i}")
        if not 0.0 <= v <= 100.0:
            raise ValueError(f"q{i}={v:g} outside range [0,100]")
        scores.append(v)
    idx_text = row["attn_index"]
    try:
        idx = int(idx_text)
    except (TypeError, ValueError):
        raise ValueError(f"attn_index={idx_text!r} is not an integer")
    if not 0 <= idx <= 7:
        raise ValueError(f"attn_index={idx} outside range [0,7]")
    rev = _finite(row["attn_score"], "attn_score")
    if not 0.0 <= rev <= 100.0:
        raise ValueError(f"attn_score={rev:g} outside range [0,100]")
    dur = _finite(row["duration_s"], "duration_s")
    if dur <= 0:
        raise ValueError(f"duration_s={dur:g} must be positive")
    ts = _finite(row["timestamp"], "timestamp")
    return EmaRecord(pid, sid, ts, tuple(scores), idx, rev, dur)


def parse_ema_file(source, strict: bool = False) -> ParseResult:
    """Parse an EMA CSV into records; invalid rows become diagnostics.

    In strict mode any invalid row raises DataValidationError listing all of them.
    """
    fh = _open_text(source)
    try:
        reader = csv.DictReader(fh)
        _check_header(reader.fieldnames, EMA_COLUMNS, "EMA file")
        result = ParseResult(records=[])
        seen = set()
        for n, row in enumerate(reader, start=1):
            try:
                rec = _parse_ema_row(row)
                key = (rec.participant_id, rec.session_id)
                if key in seen:
                    raise ValueError(f"duplicate session {rec.session_id} for {rec.participant_id}")
                seen.add(key)
                result.records.append(rec)
            except ValueError as exc:
                result.diagnostics.append(RowDiagnostic(n, str(exc)))
    finally:
        if fh is not source:
            fh.close()
    if strict and result.diagnostics:
        raise DataValidationError("EMA file: " + "; ".join(map(str, result.diagnostics[:20])))
    return result


def write_ema_file(records: Iterable[EmaRecord], dest) -> None:
    fh = open(dest, "w", newline="", encoding="utf-8") if isinstance(dest, (str, Path)) else dest
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EMA_COLUMNS)
        for r in records:
            w.writerow(
                [r.participant_id, r.session_id, repr(r.timestamp)]
                + [repr(s) for s in r.item_scores]
                + [r.attention_index, repr(r.reversed_score), repr(r.response_duration)]
            )
    finally:
        if fh is not dest:
            fh.close()


@dataclass
class FilterResult:
    kept: list[EmaRecord]
    excluded: list[tuple[EmaRecord, str]]

    @property
    def exclusion_fraction(self) -> float:
        n = len(self.kept) + len(self.excluded)
        return len(self.excluded) / n if n else 0.0


def attention_filter(records: Iterable[EmaRecord], tolerance: float = DEFAULT_TOLERANCE) -> FilterResult:
    """Keep a record iff its reflected reversed item agrees within tolerance."""
    if not 0.0 <= tolerance <= 100.0:
        raise ValueError(f"tolerance {tolerance} outside [0,100]")
    kept, excluded = [], []
    for r in records:
        d = r.discrepancy
        if d <= tolerance:
            kept.append(r)
        else:
            excluded.append((r, f"attention discrepancy {d:g} > tolerance {tolerance:g}"))
    return FilterResult(kept, excluded)


def parse_demographics_file(source, strict: bool = False) -> ParseResult:
    fh = _open_text(source)
    try:
        reader = csv.DictReader(fh)
        _check_header(reader.fieldnames, DEMOGRAPHIC_COLUMNS, "demographics file")
        result = ParseResult(records=[])
        seen = set()
        for n, row in enumerate(reader, start=1):
            try:
                pid = (row["participant_id"] or "").strip()
                if not pid:
                    raise ValueError("empty participant_id")
                if pid in seen:
                    raise ValueError(f"duplicate participant {pid}")
                gender = row["gender"].strip().lower()
                race = row["race"].strip().lower()
                if gender not in GENDERS:
                    raise ValueError(f"gender {gender!r} not in {GENDERS}")
                if race not in RACES:
                    raise ValueError(f"race {race!r} not in {RACES}")
                age = _finite(row["age"], "age")
                if age <= 0:
                    raise ValueError(f"age={age:g} must be positive")
                seen.add(pid)
                result.records.append(Demographics(pid, gender, race, age))
            except ValueError as exc:
                result.diagnostics.append(RowDiagnostic(n, str(exc)))
    finally:
        if fh is not source:
            fh.close()
    if strict and result.diagnostics:
        raise DataValidationError("demographics file: " + "; ".join(map(str, result.diagnostics[:20])))
    return result


def write_demographics_file(demographics: Iterable[Demographics], dest) -> None:
    with open(dest, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DEMOGRAPHIC_COLUMNS)
        for d in demographics:
            w.writerow([d.participant_id, d.gender, d.race, repr(float(d.age))])


@dataclass
class FeatureTable:
    """Columnar view of FeatureRecords: one row per image, registry-ordered values."""

    participant_id: np.ndarray
    session_id: np.ndarray
    image_id: np.ndarray
    values: np.ndarray
    confidence: np.ndarray
    success: np.ndarray

    def __len__(self):
        return len(self.image_id)

    def record(self, i: int) -> dict:
        return {
            "participant_id": self.participant_id[i],
            "session_id": self.session_id[i],
            "image_id": self.image_id[i],
            "values": dict(zip(registry.FEATURE_NAMES, self.values[i].tolist())),
            "metadata": {"confidence": float(self.confidence[i]), "success": bool(self.success[i])},
        }

    def take(self, idx) -> "FeatureTable":
        return FeatureTable(
            self.participant_id[idx], self.session_id[idx], self.image_id[idx],
            self.values[idx], self.confidence[idx], self.success[idx],
        )


def check_feature_header(header: list[str]) -> None:
    """Raise SchemaError naming any missing id, metadata or registry column."""
    header = [h.strip() for h in header]
    required = list(registry.ID_COLUMNS) + list(registry.METADATA_COLUMNS) + list(registry.FEATURE_NAMES)
    missing = [c for c in required if c not in header]
    dupes = sorted({c for c in header if header.count(c) > 1})
    n_trainable = sum(1 for c in header if c in registry.FEATURE_INDEX)
    if missing or dupes:
        parts = []
        if missing:
            shown = ", ".join(missing[:10]) + (" ..." if len(missing) > 10 else "")
            parts.append(f"missing {len(missing)} column(s): {shown}")
        if dupes:
            parts.append(f"duplicated column(s): {', '.join(dupes)}")
        raise SchemaError(
            f"feature file has {n_trainable} of {registry.N_FEATURES} registry columns; " + "; ".join(parts)
        )
    for group, cols in registry.GROUPS.items():
        if sum(1 for c in cols if c in header) != registry.EXPECTED_SIZES[group]:
            raise SchemaError(f"feature group {group} column count mismatch")


def _parse_bool(v) -> bool:
    s = str(v).strip().lower()
    if s in ("1", "true", "1.0"):
        return True
    if s in ("0", "false", "0.0"):
        return False
    raise ValueError(f"success={v!r} is not boolean")


def parse_feature_file(source, strict: bool = False) -> tuple[FeatureTable, list[RowDiagnostic]]:
    """Parse an OpenFace-style feature CSV (ids, metadata, 709 registry columns)."""
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            header = next(csv.reader(fh), None)
    else:
        text = source.read()
        header = next(csv.reader(io.StringIO(text)), None)
        source = io.StringIO(text)
    if header is None:
        raise SchemaError("feature file: empty file")
    check_feature_header(header)
    id_dtypes = {c: str for c in registry.ID_COLUMNS}
    df = pd.read_csv(source, dtype={**id_dtypes, "success": str}, float_precision="round_trip",
                     keep_default_na=False, na_values=["", "nan", "NaN"])
    values = df.loc[:, list(registry.FEATURE_NAMES)].to_numpy(dtype=np.float64)
    confidence = pd.to_numeric(df["confidence"], errors="coerce").to_numpy(dtype=np.float64)
    diagnostics: list[RowDiagnostic] = []
    ok = np.ones(len(df), dtype=bool)
    bad_vals = ~np.isfinite(values).all(axis=1)
    success = np.zeros(len(df), dtype=bool)
    image_ids = df["image_id"].to_numpy(dtype=str)
    seen: set = set()
    for i in range(len(df)):
        msgs = []
        if bad_vals[i]:
            cols = [registry.FEATURE_NAMES[j] for j in np.flatnonzero(~np.isfinite(values[i]))[:5]]
            msgs.append(f"non-finite feature values in {', '.join(cols)}")
        c = confidence[i]
        if not (np.isfinite(c) and 0.0 <= c <= 1.0):
            msgs.append(f"confidence={df['confidence'].iloc[i]!r} outside [0,1]")
        try:
            success[i] = _parse_bool(df["success"].iloc[i])
        except ValueError as exc:
            msgs.append(str(exc))
        if image_ids[i] in seen:
            msgs.append(f"duplicate image_id {image_ids[i]}")
        seen.add(image_ids[i])
        if msgs:
            ok[i] = False
            diagnostics.append(RowDiagnostic(i + 1, "; ".join(msgs)))
    if strict and diagnostics:
        raise DataValidationError("feature file: " + "; ".join(map(str, diagnostics[:20])))
    table = FeatureTable(
        participant_id=df["participant_id"].to_numpy(dtype=str)[ok],
        session_id=df["session_id"].to_numpy(dtype=str)[ok],
        image_id=image_ids[ok],
        values=np.ascontiguousarray(values[ok]),
        confidence=confidence[ok],
        success=success[ok],
    )
    return table, diagnostics


def write_feature_file(table: FeatureTable, dest) -> None:
    df = pd.DataFrame(table.values, columns=list(registry.FEATURE_NAMES))
    df.insert(0, "success", table.success.astype(int))
    df.insert(0, "confidence", table.confidence)
    df.insert(0, "image_id", table.image_id)
    df.insert(0, "session_id", table.session_id)
    df.insert(0, "participant_id", table.participant_id)
    # Default float formatting is repr-based and round-trips exactly.
    df.to_csv(dest, index=False, lineterminator="\n")


@dataclass(frozen=True)
class Dataset:
    """Joined analysis samples; one row per retained image."""

    X: np.ndarray
    feature_names: tuple[str, ...]
    total: np.ndarray
    label: np.ndarray
    participant_id: np.ndarray
    session_id: np.ndarray
    image_id: np.ndarray
    duration: np.ndarray
    demographics: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("X", "total", "label", "participant_id", "session_id", "image_id", "duration"):
            arr = getattr(self, name)
            if isinstance(arr, np.ndarray) and arr.flags.writeable:
                arr.flags.writeable = False
        missing = set(np.unique(self.participant_id)) - set(self.demographics) if self.demographics else set()
        if missing:
            raise DataValidationError(f"samples reference participants without an index entry: {sorted(missing)[:5]}")

    @property
    def n_samples(self) -> int:
        return len(self.total)

    @property
    def participants(self) -> list[str]:
        return sorted(set(self.participant_id.tolist()))

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return replace(
            self,
            X=self.X[idx], total=self.total[idx], label=self.label[idx],
            participant_id=self.participant_id[idx], session_id=self.session_id[idx],
            image_id=self.image_id[idx], duration=self.duration[idx],
        )

    def project(self, names) -> "Dataset":
        names = list(names)
        pos = {n: i for i, n in enumerate(self.feature_names)}
        missing = [n for n in names if n not in pos]
        if missing:
            raise KeyError(f"features not in dataset: {missing[:5]}")
        cols = [pos[n] for n in names]
        return replace(self, X=np.ascontiguousarray(self.X[:, cols]), feature_names=tuple(names))

    def indices_for(self, participants) -> np.ndarray:
        return np.flatnonzero(np.isin(self.participant_id, np.asarray(sorted(participants), dtype=str)))

    def sample_attribute(self, attr: str) -> np.ndarray:
        """Per-sample demographic attribute (gender, race or age)."""
        lookup = {pid: getattr(d, attr) for pid, d in self.demographics.items()}
        return np.array([lookup[p] for p in self.participant_id.tolist()])

    def baseline_matrix(self) -> np.ndarray:
        """Encoded gender, age and per-EMA response duration."""
        code = {g: i for i, g in enumerate(GENDERS)}
        gender = np.array([code[g] for g in self.sample_attribute("gender")], dtype=float)
        age = self.sample_attribute("age").astype(float)
        return np.column_stack([gender, age, np.asarray(self.duration, dtype=float)])

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for arr in (self.X, self.total, self.label, self.duration):
            h.update(np.ascontiguousarray(arr).tobytes())
        for arr in (self.participant_id, self.session_id, self.image_id):
            h.update("\x1f".join(arr.tolist()).encode())
        h.update("\x1f".join(self.feature_names).encode())
        return h.hexdigest()

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        arrays = {
            "X": self.X, "total": self.total, "label": self.label, "participant_id": self.participant_id,
            "session_id": self.session_id, "image_id": self.image_id, "duration": self.duration,
        }
        # np.savez stamps the wall clock into zip headers; fixed dates keep bytes reproducible.
        with zipfile.ZipFile(d / "dataset.npz", "w", zipfile.ZIP_STORED, allowZip64=True) as zf:
            for name, arr in arrays.items():
                info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
                with zf.open(info, "w", force_zip64=True) as fh:
                    np.lib.format.write_array(fh, np.ascontiguousarray(arr), allow_pickle=False)
        meta = {
            "feature_names": list(self.feature_names),
            "demographics": {p: vars(v) for p, v in sorted(self.demographics.items())},
            "provenance": self.provenance,
        }
        (d / "dataset.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory) -> "Dataset":
        d = Path(directory)
        meta = json.loads((d / "dataset.json").read_text())
        with np.load(d / "dataset.npz", allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
        demo = {p: Demographics(**v) for p, v in meta["demographics"].items()}
        return cls(
            X=arrays["X"], feature_names=tuple(meta["feature_names"]), total=arrays["total"],
            label=arrays["label"], participant_id=arrays["participant_id"],
            session_id=arrays["session_id"], image_id=arrays["image_id"],
            duration=arrays["duration"], demographics=demo, provenance=meta["provenance"],
        )

    def equals(self, other: "Dataset") -> bool:
        same = self.feature_names == other.feature_names and self.provenance == other.provenance
        same = same and self.demographics == other.demographics
        for name in ("X", "total", "label", "participant_id", "session_id", "image_id", "duration"):
            a, b = getattr(self, name), getattr(other, name)
            same = same and a.shape == b.shape and a.dtype == b.dtype and a.tobytes() == b.tobytes()
        return bool(same)


@dataclass
class DropReport:
    orphan_images: list[str] = field(default_factory=list)
    excluded_session_images: list[str] = field(default_factory=list)
    missing_demographics_images: list[str] = field(default_factory=list)
    participants_without_demographics: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "orphan_images": len(self.orphan_images),
            "excluded_session_images": len(self.excluded_session_images),
            "missing_demographics_images": len(self.missing_demographics_images),
            "participants_without_demographics": self.participants_without_demographics,
            "orphan_image_ids": self.orphan_images[:100],
        }


def join_dataset(
    kept: list[EmaRecord],
    features: FeatureTable,
    demographics: Iterable[Demographics],
    excluded: Iterable = (),
    threshold: float = PHQ_THRESHOLD,
    strict: bool = False,
) -> tuple[Dataset, DropReport]:
    """Attach each image to its kept EMA; every burst image becomes one sample."""
    excluded_keys = {
        (e[0] if isinstance(e, tuple) else e).participant_id + "\x1f" + (e[0] if isinstance(e, tuple) else e).session_id
        for e in excluded
    }
    n_excluded = len(excluded_keys)
    demo = {d.participant_id: d for d in demographics}
    ema_by_key = {r.participant_id + "\x1f" + r.session_id: r for r in kept}

    keys = np.char.add(np.char.add(features.participant_id.astype(str), "\x1f"), features.session_id.astype(str))
    report = DropReport()
    take, totals, durations = [], [], []
    for i, key in enumerate(keys.tolist()):
        rec = ema_by_key.get(key)
        if rec is None:
            if key in excluded_keys:
                report.excluded_session_images.append(str(features.image_id[i]))
            else:
                report.orphan_images.append(str(features.image_id[i]))
            continue
        if rec.participant_id not in demo:
            report.missing_demographics_images.append(str(features.image_id[i]))
            continue
        take.append(i)
        totals.append(rec.total)
        durations.append(rec.response_duration)

    without = sorted({r.participant_id for r in kept} - set(demo))
    report.participants_without_demographics = without
    if without and strict:
        raise DataValidationError(f"missing demographics for participants: {without[:10]}")
    if without:
        log.warning("dropping samples of %d participant(s) without demographics", len(without))

    take = np.asarray(take, dtype=np.int64)
    sub = features.take(take)
    total = np.asarray(totals, dtype=np.float64)
    pids = sub.participant_id.astype(str)
    used = sorted(set(pids.tolist()))
    provenance = {
        "raw_emas": len(kept) + n_excluded,
        "excluded_by_filter": n_excluded,
        "kept_emas": len(kept),
        "feature_records": len(features),
        "retained_images": int(len(take)),
        "orphan_images": len(report.orphan_images),
        "excluded_session_images": len(report.excluded_session_images),
        "missing_demographics_images": len(report.missing_demographics_images),
        "participants": len(used),
        "label_threshold": threshold,
    }
    ds = Dataset(
        X=sub.values, feature_names=registry.FEATURE_NAMES, total=total,
        label=classify_many(total, threshold), participant_id=pids,
        session_id=sub.session_id.astype(str), image_id=sub.image_id.astype(str),
        duration=np.asarray(durations, dtype=np.float64),
        demographics={p: demo[p] for p in used}, provenance=provenance,
    )
    return ds, report
