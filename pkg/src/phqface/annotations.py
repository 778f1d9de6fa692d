"""Image-characteristic annotation tables and inter-rater agreement."""
from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .errors import DataValidationError, SchemaError, UndefinedMetricError

log = logging.getLogger(__name__)

ANNOTATION_COLUMNS = ["image_id", "characteristic", "source", "label"]
SOURCES = ("vqa", "annotator_a", "annotator_b")

VOCABULARY = {
    "angle": ("low angle", "level angle", "high angle"),
    "dominant_color": ("white", "black", "brown", "blue", "gray", "yellow", "red", "green",
                       "orange", "pink", "purple", "beige"),
    "lighting": ("well lit", "dimly lit", "poorly lit"),
    "location": ("indoors", "outdoors"),
    "people_count": ("none", "one", "two", "three+"),
}
# Free-text object lists; reported only as ranked frequencies.
BACKGROUND = "background_objects"
CHARACTERISTICS = tuple(VOCABULARY) + (BACKGROUND,)
OTHER = "other"


@dataclass(frozen=True)
class CharacteristicAnnotation:
    image_id: str
    characteristic: str
    source: str
    label: str


def parse_annotation_file(path, strict: bool = False) -> list[CharacteristicAnnotation]:
    out, problems = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [h.strip() for h in reader.fieldnames] != ANNOTATION_COLUMNS:
            raise SchemaError(f"annotation file header must be {','.join(ANNOTATION_COLUMNS)}")
        for n, row in enumerate(reader, start=1):
            char = row["characteristic"].strip()
            src = row["source"].strip()
            if char not in CHARACTERISTICS:
                problems.append(f"row {n}: unknown characteristic {char!r}")
                continue
            if src not in SOURCES:
                problems.append(f"row {n}: unknown source {src!r}")
                continue
            out.append(CharacteristicAnnotation(row["image_id"].strip(), char, src, row["label"].strip().lower()))
    if problems and strict:
        raise DataValidationError("; ".join(problems[:20]))
    for p in problems:
        log.warning(p)
    return out


def write_annotation_file(annotations, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ANNOTATION_COLUMNS)
        for a in annotations:
            w.writerow([a.image_id, a.characteristic, a.source, a.label])


def distribution_report(annotations, characteristic: str) -> list[dict]:
    """Counts and percentages of VQA labels for one characteristic.

    Labels outside the vocabulary are counted under "other" and flagged.
    Rows are ordered by count (descending), then label.
    """
    vocab = VOCABULARY.get(characteristic)
    if vocab is None:
        raise ValueError(f"no vocabulary for characteristic {characteristic!r}")
    labels = [a.label for a in annotations if a.characteristic == characteristic and a.source == "vqa"]
    if not labels:
        raise ValueError("no annotations")
    counts = Counter()
    unknown = Counter()
    for lab in labels:
        if lab in vocab:
            counts[lab] += 1
        else:
            counts[OTHER] += 1
            unknown[lab] += 1
    if unknown:
        log.warning("%s: %d label(s) outside vocabulary counted as other: %s",
                    characteristic, sum(unknown.values()), ", ".join(sorted(unknown)))
    total = len(labels)
    rows = [
        {"label": lab, "count": c, "percentage": 100.0 * c / total, "flagged": lab == OTHER and bool(unknown)}
        for lab, c in counts.items()
    ]
    rows.sort(key=lambda r: (-r["count"], r["label"]))
    return rows


def cohen_kappa(labels_a, labels_b, perfect_convention: bool = False) -> float:
    """Cohen's kappa with expected agreement from the raters' marginals."""
    a, b = list(labels_a), list(labels_b)
    if len(a) != len(b):
        raise ValueError("rater label lists differ in length")
    if not a:
        raise ValueError("cohen_kappa needs at least one pair")
    n = len(a)
    p_o = sum(x == y for x, y in zip(a, b)) / n
    ca, cb = Counter(a), Counter(b)
    p_e = sum(ca[k] * cb[k] for k in ca) / (n * n)
    if p_e == 1.0:
        if perfect_convention and p_o == 1.0:
            return 1.0
        raise UndefinedMetricError("cohen_kappa undefined: expected agreement is 1")
    return (p_o - p_e) / (1.0 - p_e)


def vqa_agreement_accuracy(vqa_labels, annotator_a, annotator_b) -> float:
    """Mean over the two annotators of the fraction of images where VQA matches."""
    v, a, b = list(vqa_labels), list(annotator_a), list(annotator_b)
    if not v:
        raise ValueError("empty input")
    if not len(v) == len(a) == len(b):
        raise ValueError("label lists must be aligned triples")
    acc_a = sum(x == y for x, y in zip(v, a)) / len(v)
    acc_b = sum(x == y for x, y in zip(v, b)) / len(v)
    return (acc_a + acc_b) / 2.0


def aligned_labels(annotations, characteristic: str):
    """Image ids annotated by all three sources, with their labels in that order."""
    by_source: dict[str, dict[str, str]] = {s: {} for s in SOURCES}
    for x in annotations:
        if x.characteristic == characteristic:
            by_source[x.source][x.image_id] = x.label
    ids = sorted(set.intersection(*(set(d) for d in by_source.values())))
    return ids, [[by_source[s][i] for i in ids] for s in SOURCES]


def background_frequencies(annotations) -> list[dict]:
    counts = Counter()
    for a in annotations:
        if a.characteristic == BACKGROUND and a.source == "vqa":
            for obj in a.label.split(";"):
                obj = obj.strip()
                if obj:
                    counts[obj] += 1
    return [{"object": k, "count": c} for k, c in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))]


def annotation_summary(annotations) -> dict:
    """Per-characteristic distribution, VQA accuracy and annotator kappa."""
    out = {}
    for char in CHARACTERISTICS:
        entry: dict = {}
        if char != BACKGROUND:
            try:
                entry["distribution"] = distribution_report(annotations, char)
            except ValueError:
                entry["distribution"] = None
        ids, (v, a, b) = aligned_labels(annotations, char)
        entry["n_aligned"] = len(ids)
        if ids:
            entry["vqa_accuracy"] = vqa_agreement_accuracy(v, a, b)
            try:
                entry["kappa"] = cohen_kappa(a, b)
            except UndefinedMetricError:
                entry["kappa"] = None
        out[char] = entry
    return out


def format_summary_text(summary: dict) -> str:
    lines = []
    for char, entry in summary.items():
        acc = entry.get("vqa_accuracy")
        kap = entry.get("kappa")
        head = char
        if acc is not None:
            head += f" (Acc={100 * acc:.2f}; kappa={'n/a' if kap is None else f'{kap:.2f}'})"
        lines.append(head)
        for row in entry.get("distribution") or []:
            lines.append(f"  {row['label']:<16}{row['count']:>10,d} ({row['percentage']:.2f}%)")
    return "\n".join(lines) + "\n"


def save_distribution_csv(rows, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["label"], lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
