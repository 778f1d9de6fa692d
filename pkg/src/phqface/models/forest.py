"""CART random forests grown on per-forest quantile bins.

Split search runs over at most ``max_bins`` candidate thresholds per feature,
taken from actual training values. When a feature has no more distinct
values than that, the search is the exact greedy CART split.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

FORMAT_VERSION = 1
EDGE_SAMPLE_ROWS = 20000


@numba.njit(cache=True, nogil=True, inline="always")
def _next_u64(state):
    x = state[0]
    x ^= x >> np.uint64(12)
    x ^= x << np.uint64(25)
    x ^= x >> np.uint64(27)
    state[0] = x
    return x * np.uint64(2685821657736338717)


@numba.njit(cache=True, nogil=True, inline="always")
def _randbelow(state, n):
    return np.int64(_next_u64(state) >> np.uint64(11)) % n


@numba.njit(cache=True, nogil=True)
def _grow(XbT, n_bins, edges, y, w, rows, max_depth, min_leaf, mtry, seed):
    n_rows = rows.shape[0]
    p = XbT.shape[0]
    cap = 2 * n_rows + 1
    feature = np.full(cap, -1, np.int32)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int32)
    right = np.full(cap, -1, np.int32)
    value = np.zeros(cap)
    cover = np.zeros(cap)

    state = np.empty(1, np.uint64)
    state[0] = seed
    perm = np.arange(p)
    max_b = 0
    for f in range(p):
        if n_bins[f] > max_b:
            max_b = n_bins[f]
    hist_w = np.zeros(max_b)
    hist_s = np.zeros(max_b)

    # stack entries: node, start, end, depth
    stack = np.empty((cap, 4), np.int64)
    top = 0
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n_rows
    stack[0, 3] = 0
    top = 1
    n_nodes = 1
    while top > 0:
        top -= 1
        node = stack[top, 0]
        start = stack[top, 1]
        end = stack[top, 2]
        depth = stack[top, 3]
        W = 0.0
        S = 0.0
        Q = 0.0
        for k in range(start, end):
            r = rows[k]
            W += w[r]
            S += w[r] * y[r]
            Q += w[r] * y[r] * y[r]
        value[node] = S / W
        cover[node] = W
        parent_score = S * S / W
        impurity = Q - parent_score
        if (max_depth >= 0 and depth >= max_depth) or W < 2.0 * min_leaf or impurity <= 1e-12 * (abs(Q) + 1e-300):
            continue
        eps = 1e-12 * (abs(parent_score) + 1.0)
        best_gain = 0.0
        best_f = -1
        best_b = -1
        for m in range(mtry):
            pick = m + _randbelow(state, p - m)
            tmp = perm[m]
            perm[m] = perm[pick]
            perm[pick] = tmp
            f = perm[m]
            nb = n_bins[f]
            for b in range(nb):
                hist_w[b] = 0.0
                hist_s[b] = 0.0
            lo = nb
            hi = -1
            for k in range(start, end):
                r = rows[k]
                b = np.int64(XbT[f, r])
                hist_w[b] += w[r]
                hist_s[b] += w[r] * y[r]
                if b < lo:
                    lo = b
                if b > hi:
                    hi = b
            wl = 0.0
            sl = 0.0
            for b in range(lo, hi):
                wl += hist_w[b]
                sl += hist_s[b]
                if hist_w[b] == 0.0:
                    continue
                wr = W - wl
                if wl < min_leaf or wr < min_leaf:
                    continue
                sr = S - sl
                gain = sl * sl / wl + sr * sr / wr - parent_score
                if gain > best_gain + eps or (best_f >= 0 and abs(gain - best_gain) <= eps and f < best_f):
                    best_gain = gain
                    best_f = f
                    best_b = b
        if best_f < 0 or best_gain <= eps:
            continue
        i = start
        j = end - 1
        while i <= j:
            if XbT[best_f, rows[i]] <= best_b:
                i += 1
            else:
                tmp = rows[i]
                rows[i] = rows[j]
                rows[j] = tmp
                j -= 1
        feature[node] = best_f
        threshold[node] = edges[best_f, best_b]
        lnode = n_nodes
        rnode = n_nodes + 1
        n_nodes += 2
        left[node] = lnode
        right[node] = rnode
        stack[top, 0] = rnode
        stack[top, 1] = i
        stack[top, 2] = end
        stack[top, 3] = depth + 1
        top += 1
        stack[top, 0] = lnode
        stack[top, 1] = start
        stack[top, 2] = i
        stack[top, 3] = depth + 1
        top += 1
    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy(), cover[:n_nodes].copy())


@numba.njit(cache=True, nogil=True)
def _predict_tree(feature, threshold, left, right, value, X, out):
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] += value[node]


@numba.njit(cache=True, nogil=True)
def _apply_tree(feature, threshold, left, right, X):
    out = np.empty(X.shape[0], np.int64)
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    def depth(self) -> int:
        best, stack = 0, [(0, 0)]
        while stack:
            node, d = stack.pop()
            if self.feature[node] < 0:
                best = max(best, d)
            else:
                stack += [(self.left[node], d + 1), (self.right[node], d + 1)]
        return best

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        out = np.zeros(X.shape[0])
        _predict_tree(self.feature, self.threshold, self.left, self.right, self.value, X, out)
        return out

    def apply(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _apply_tree(self.feature, self.threshold, self.left, self.right, X)

    @property
    def expected_value(self) -> float:
        leaves = self.feature < 0
        return float((self.value[leaves] * self.cover[leaves]).sum() / self.cover[0])

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "cover": self.cover.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "Tree":
        return cls(
            np.array(d["feature"], dtype=np.int32), np.array(d["threshold"], dtype=np.float64),
            np.array(d["left"], dtype=np.int32), np.array(d["right"], dtype=np.int32),
            np.array(d["value"], dtype=np.float64), np.array(d["cover"], dtype=np.float64),
        )


@dataclass
class RandomForest:
    task: str
    n_trees: int
    max_depth: int | None
    min_samples_leaf: int
    mtry: int
    seed: int
    n_features: int
    trees: list = field(default_factory=list)
    max_bins: int = 255
    class_weight: str | None = None

    def predict(self, X) -> np.ndarray:
        """Mean over trees: class-1 probability (classify) or score (regress)."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got shape {X.shape}")
        out = np.zeros(X.shape[0])
        for t in self.trees:
            _predict_tree(t.feature, t.threshold, t.left, t.right, t.value, X, out)
        return out / len(self.trees)

    def predict_proba(self, X) -> np.ndarray:
        return self.predict(X)

    @property
    def expected_value(self) -> float:
        return float(np.mean([t.expected_value for t in self.trees]))

    def hyperparameters(self) -> dict:
        return {
            "n_trees": self.n_trees, "max_depth": self.max_depth, "min_samples_leaf": self.min_samples_leaf,
            "mtry": self.mtry, "max_bins": self.max_bins, "class_weight": self.class_weight,
        }

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "random_forest",
            "task": self.task,
            "seed": self.seed,
            "n_features": self.n_features,
            "hyperparameters": self.hyperparameters(),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d) -> "RandomForest":
        hp = d["hyperparameters"]
        return cls(
            task=d["task"], n_trees=hp["n_trees"], max_depth=hp["max_depth"],
            min_samples_leaf=hp["min_samples_leaf"], mtry=hp["mtry"], seed=d["seed"],
            n_features=d["n_features"], trees=[Tree.from_dict(t) for t in d["trees"]],
            max_bins=hp.get("max_bins", 255), class_weight=hp.get("class_weight"),
        )


def default_mtry(p: int, task: str) -> int:
    return max(1, math.ceil(math.sqrt(p)) if task == "classify" else math.ceil(p / 3))


def bin_edges(X, max_bins: int = 255, seed: int = 0, sample_rows: int = EDGE_SAMPLE_ROWS):
    """Candidate thresholds per feature, drawn from training values.

    Returns a (p, max_bins - 1) edge array padded with +inf and per-feature
    bin counts. Large inputs use a seeded row subsample to place the edges.
    """
    X = np.asarray(X, dtype=np.float64)
    n, p = X.shape
    if n > sample_rows:
        rows = np.sort(np.random.default_rng(seed).choice(n, sample_rows, replace=False))
        S = X[rows]
    else:
        S = X
    S = np.sort(S, axis=0)
    m = S.shape[0]
    edges = np.full((p, max_bins - 1), np.inf)
    n_bins = np.empty(p, dtype=np.int64)
    pos = (np.arange(1, max_bins) * m) // max_bins
    for j in range(p):
        col = S[:, j]
        u = np.unique(col)
        if len(u) <= max_bins:
            e = u[:-1]
        else:
            e = np.unique(col[pos])
            if e[-1] == u[-1]:
                e = e[:-1]
        edges[j, : len(e)] = e
        n_bins[j] = len(e) + 1
    return edges, n_bins


@numba.njit(cache=True, nogil=True)
def _bin_sorted(col, order, edges, n_edges, out):
    pos = 0
    for k in range(order.shape[0]):
        r = order[k]
        x = col[r]
        while pos < n_edges and edges[pos] < x:
            pos += 1
        out[r] = pos


def apply_bins(X, edges, n_bins) -> np.ndarray:
    """Bin codes laid out feature-major (p x n); code b means x <= edges[b]."""
    XT = np.ascontiguousarray(np.asarray(X, dtype=np.float64).T)
    out = np.empty(XT.shape, dtype=np.uint8)
    for j in range(XT.shape[0]):
        _bin_sorted(XT[j], np.argsort(XT[j]), edges[j], n_bins[j] - 1, out[j])
    return out


def _tree_seeds(seed: int, n_trees: int):
    children = np.random.SeedSequence(seed).spawn(n_trees)
    return children


def fit_random_forest(X, y, task: str = "classify", n_trees: int = 100, max_depth: int | None = None,
                      min_samples_leaf: int = 1, mtry: int | None = None, seed: int = 0,
                      max_bins: int = 255, class_weight: str | None = None,
                      threads: int | None = None) -> RandomForest:
    """Bagged CART trees with per-node feature subsampling.

    Gini impurity (classify, y in {0,1}) and variance reduction (regress)
    share the same weighted split score. Every tree draws its bootstrap and
    feature subsets from a stream derived from (seed, tree index), so the
    forest does not depend on the thread count.
    """
    if task not in ("classify", "regress"):
        raise ValueError(f"unknown task {task!r}")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need a 2-D X with at least 2 rows")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite values in forest input")
    if not 2 <= max_bins <= 256:
        raise ValueError("max_bins must be in [2, 256]")
    n, p = X.shape
    mtry = default_mtry(p, task) if mtry is None else int(mtry)
    if not 1 <= mtry <= p:
        raise ValueError(f"mtry={mtry} must be in [1, {p}]")
    base_w = np.ones(n)
    if class_weight == "balanced" and task == "classify":
        pos = y.sum()
        if 0 < pos < n:
            base_w = np.where(y > 0.5, n / (2 * pos), n / (2 * (n - pos)))
    elif class_weight not in (None, "balanced"):
        raise ValueError(f"unknown class_weight {class_weight!r}")
    edges, n_bins = bin_edges(X, max_bins, seed)
    XbT = apply_bins(X, edges, n_bins)
    depth_arg = -1 if max_depth is None else int(max_depth)
    seqs = _tree_seeds(seed, n_trees)

    def grow(t):
        rng = np.random.default_rng(seqs[t])
        counts = np.bincount(rng.integers(0, n, n), minlength=n).astype(np.float64)
        rows = np.flatnonzero(counts).astype(np.int64)
        w = counts * base_w
        tree_seed = np.uint64(seqs[t].generate_state(1, dtype=np.uint64)[0] | np.uint64(1))
        arrays = _grow(XbT, n_bins, edges, y, w, rows, depth_arg, float(min_samples_leaf), mtry, tree_seed)
        return Tree(*arrays)

    workers = threads or os.cpu_count() or 1
    if workers > 1 and n_trees > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trees = list(pool.map(grow, range(n_trees)))
    else:
        trees = [grow(t) for t in range(n_trees)]
    return RandomForest(task, n_trees, max_depth, int(min_samples_leaf), mtry, int(seed), p, trees,
                        max_bins, class_weight)


def in_bag_counts(forest: RandomForest, n: int) -> np.ndarray:
    """Bootstrap counts per tree (n_trees x n), regenerated from the seed."""
    seqs = _tree_seeds(forest.seed, forest.n_trees)
    out = np.empty((forest.n_trees, n), dtype=np.int64)
    for t in range(forest.n_trees):
        rng = np.random.default_rng(seqs[t])
        out[t] = np.bincount(rng.integers(0, n, n), minlength=n)
    return out


def oob_prediction(forest: RandomForest, X) -> np.ndarray:
    """Out-of-bag mean prediction per training row (nan if never out of bag)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    counts = in_bag_counts(forest, X.shape[0])
    total = np.zeros(X.shape[0])
    hits = np.zeros(X.shape[0])
    for t, tree in enumerate(forest.trees):
        oob = counts[t] == 0
        if oob.any():
            total[oob] += tree.predict(X[oob])
            hits[oob] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(hits > 0, total / hits, np.nan)
