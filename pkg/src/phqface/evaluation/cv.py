"""Participant-disjoint fold plans and nested grid search."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SplitPlan:
    folds: tuple[tuple[str, ...], ...]
    seed: int

    @property
    def k(self) -> int:
        return len(self.folds)

    @property
    def participants(self) -> list[str]:
        return sorted(p for f in self.folds for p in f)

    def test(self, i: int) -> list[str]:
        return list(self.folds[i])

    def train(self, i: int) -> list[str]:
        return sorted(p for j, f in enumerate(self.folds) if j != i for p in f)

    def validate(self, participants=None) -> None:
        seen = set()
        for f in self.folds:
            if seen & set(f):
                raise AssertionError("folds overlap")
            seen |= set(f)
        if participants is not None and seen != set(participants):
            raise AssertionError("folds do not cover the participant set")
        sizes = [len(f) for f in self.folds]
        if max(sizes) - min(sizes) > 1:
            raise AssertionError(f"fold sizes unbalanced: {sizes}")

    def to_dict(self) -> dict:
        return {"k": self.k, "seed": self.seed, "folds": [list(f) for f in self.folds]}


def make_subject_folds(participants, k: int = 5, seed: int = 0, stratify=None) -> SplitPlan:
    """Seeded shuffle of participants, then round-robin into k folds.

    ``stratify`` optionally maps participant -> sortable value (e.g. share of
    depressed samples); participants are then dealt in value order so every
    fold spans the range.
    """
    pids = sorted({str(p) for p in participants})
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(pids) < k:
        raise ValueError(f"cannot split {len(pids)} participants into {k} folds")
    rng = np.random.default_rng(seed)
    order = [pids[i] for i in rng.permutation(len(pids))]
    if stratify is not None:
        order = sorted(order, key=lambda p: stratify[p])
    buckets: list[list[str]] = [[] for _ in range(k)]
    for i, p in enumerate(order):
        buckets[i % k].append(p)
    plan = SplitPlan(tuple(tuple(sorted(b)) for b in buckets), int(seed))
    plan.validate(pids)
    return plan


@dataclass
class TuneResult:
    best: dict
    best_index: int
    scores: list = field(default_factory=list)  # mean inner score per grid entry (nan if all missing)
    objective: str = "classify"


def nested_tune(train_participants, grid, evaluate: Callable, inner_k: int = 3,
                objective: str = "classify", seed: int = 0) -> TuneResult:
    """Exhaustive inner-CV grid search over participant-disjoint inner folds.

    ``evaluate(params, inner_train, inner_val)`` returns the fold's balanced
    accuracy (classify) or MAE (regress), or None when undefined. Ties go to
    the earliest grid entry. Every entry is evaluated even if the grid has one.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("empty hyperparameter grid")
    if objective not in ("classify", "regress"):
        raise ValueError(f"unknown objective {objective!r}")
    inner = make_subject_folds(train_participants, min(inner_k, len(set(train_participants))), seed)
    scores = []
    for params in grid:
        vals = []
        for i in range(inner.k):
            v = evaluate(params, inner.train(i), inner.test(i))
            if v is None:
                warnings.warn(f"inner fold {i} metric undefined (single-class fold); skipped")
                continue
            vals.append(v)
        scores.append(float(np.mean(vals)) if vals else math.nan)
        log.debug("grid %s -> %s", params, scores[-1])
    best_i = 0
    best_v = None
    for i, s in enumerate(scores):
        if math.isnan(s):
            continue
        better = best_v is None or (s > best_v if objective == "classify" else s < best_v)
        if better:
            best_i, best_v = i, s
    return TuneResult(dict(grid[best_i]), best_i, scores, objective)
