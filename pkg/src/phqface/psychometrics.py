"""Ground-truth construction and survey reliability statistics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UndefinedMetricError

PHQ_THRESHOLD = 334.0
DEPRESSED = 1
NOT_DEPRESSED = 0


def total_score(record) -> float:
    """Sum of the eight rescaled PHQ items (0-800)."""
    scores = record.item_scores if hasattr(record, "item_scores") else record
    return float(sum(scores))


def classify(total: float, threshold: float = PHQ_THRESHOLD) -> int:
    # Inclusive at the integer cut: 334 is depressed, 333 is not.
    return DEPRESSED if total >= threshold else NOT_DEPRESSED


def classify_many(totals, threshold: float = PHQ_THRESHOLD) -> np.ndarray:
    return (np.asarray(totals, dtype=float) >= threshold).astype(np.int8)


def cronbach_alpha(item_matrix) -> float:
    """Cronbach's alpha for a respondents x items matrix.

    Uses sample (n-1) variances for both the items and the row totals; the
    ratio makes the choice of denominator irrelevant as long as it is shared.
    """
    m = np.asarray(item_matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] < 2 or m.shape[1] < 2:
        raise UndefinedMetricError("cronbach_alpha needs at least 2 respondents and 2 items")
    k = m.shape[1]
    item_var = m.var(axis=0, ddof=1)
    total_var = m.sum(axis=1).var(ddof=1)
    if not np.any(item_var > 0) or total_var <= 0:
        raise UndefinedMetricError("cronbach_alpha undefined: total score has zero variance")
    return float(k / (k - 1) * (1.0 - item_var.sum() / total_var))


@dataclass
class ReliabilityReport:
    cronbach_alpha: float | None
    participant_std: dict[str, float] = field(default_factory=dict)
    mean_std: float | None = None
    min_std: float | None = None
    max_std: float | None = None
    omitted: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "cronbach_alpha": self.cronbach_alpha,
            "participant_std": self.participant_std,
            "mean_std": self.mean_std,
            "min_std": self.min_std,
            "max_std": self.max_std,
            "omitted_participants": self.omitted,
            "notes": self.notes,
        }


def intra_individual_variability(participant_ids, totals) -> ReliabilityReport:
    """Per-participant sample std of PHQ totals over their EMAs."""
    by_pid: dict[str, list[float]] = {}
    for pid, t in zip(participant_ids, totals):
        by_pid.setdefault(str(pid), []).append(float(t))
    stds, omitted = {}, []
    for pid in sorted(by_pid):
        vals = by_pid[pid]
        if len(vals) < 2:
            omitted.append(pid)
            continue
        stds[pid] = float(np.std(vals, ddof=1))
    report = ReliabilityReport(cronbach_alpha=None, participant_std=stds, omitted=omitted)
    if stds:
        arr = np.array(list(stds.values()))
        report.mean_std, report.min_std, report.max_std = float(arr.mean()), float(arr.min()), float(arr.max())
    if omitted:
        report.notes.append(f"{len(omitted)} participant(s) with fewer than 2 EMAs omitted")
    return report


def reliability_report(records) -> ReliabilityReport:
    """Alpha over per-EMA item rows plus intra-individual variability."""
    records = list(records)
    report = intra_individual_variability(
        [r.participant_id for r in records], [total_score(r) for r in records]
    )
    report.notes.append("alpha computed over per-EMA item responses")
    try:
        report.cronbach_alpha = cronbach_alpha([r.item_scores for r in records])
    except UndefinedMetricError as exc:
        report.notes.append(str(exc))
    return report
