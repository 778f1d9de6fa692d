"""Slow, definitional reference implementations used as test oracles."""
import itertools
import math

import numpy as np


def label_vectors(tp, tn, fp, fn):
    y = [1] * tp + [0] * tn + [0] * fp + [1] * fn
    p = [1] * tp + [0] * tn + [1] * fp + [0] * fn
    return y, p


def balanced_accuracy(y, p):
    pos = [pi for yi, pi in zip(y, p) if yi == 1]
    neg = [pi for yi, pi in zip(y, p) if yi == 0]
    return (sum(pos) / len(pos) + sum(1 - v for v in neg) / len(neg)) / 2


def pearson(a, b):
    n = len(a)
    ma, mb = math.fsum(a) / n, math.fsum(b) / n
    cov = math.fsum((x - ma) * (y - mb) for x, y in zip(a, b))
    va = math.fsum((x - ma) ** 2 for x in a)
    vb = math.fsum((y - mb) ** 2 for y in b)
    if va == 0 or vb == 0:
        return None
    return cov / math.sqrt(va * vb)


def mae(y, p):
    return math.fsum(abs(a - b) for a, b in zip(y, p)) / len(y)


def r_squared(y, p):
    m = math.fsum(y) / len(y)
    return 1 - math.fsum((a - b) ** 2 for a, b in zip(y, p)) / math.fsum((a - m) ** 2 for a in y)


def kappa(a, b):
    n = len(a)
    cats = sorted(set(a) | set(b))
    po = sum(x == y for x, y in zip(a, b)) / n
    pe = sum((a.count(c) / n) * (b.count(c) / n) for c in cats)
    return (po - pe) / (1 - pe)


def cronbach(items):
    items = np.asarray(items, dtype=float)
    k = items.shape[1]
    item_var = sum(np.var(items[:, j], ddof=1) for j in range(k))
    return k / (k - 1) * (1 - item_var / np.var(items.sum(axis=1), ddof=1))


def subset_values(tree, x, p):
    """v(S) for every feature subset S (bitmask index) under cover-weighted conditioning."""
    masks = np.arange(1 << p)

    def go(node):
        f = tree.feature[node]
        if f < 0:
            return np.full(len(masks), tree.value[node])
        left, right = tree.left[node], tree.right[node]
        hot = go(left) if x[f] <= tree.threshold[node] else go(right)
        blend = (tree.cover[left] * go(left) + tree.cover[right] * go(right)) / tree.cover[node]
        return np.where((masks >> f) & 1 == 1, hot, blend)

    return go(0)


def shapley_enumeration(trees, x, p):
    v = np.mean([subset_values(t, x, p) for t in trees], axis=0)
    masks = np.arange(1 << p)
    sizes = np.array([bin(m).count("1") for m in masks])
    phi = np.zeros(p)
    for i in range(p):
        bit = 1 << i
        without = masks[(masks & bit) == 0]
        s = sizes[without]
        w = np.array([math.factorial(k) * math.factorial(p - k - 1) / math.factorial(p) for k in s])
        phi[i] = np.sum(w * (v[without | bit] - v[without]))
    return v[0], phi


def shapley_permutations(value, p):
    """Shapley values by averaging marginal contributions over all orderings (tiny p only)."""
    phi = np.zeros(p)
    perms = list(itertools.permutations(range(p)))
    for order in perms:
        seen = set()
        for i in order:
            phi[i] += value(seen | {i}) - value(seen)
            seen.add(i)
    return phi / len(perms)
