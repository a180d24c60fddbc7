"""Axis-aligned binary trees with exhaustive threshold search.

Two growers share one node layout: a Gini classification grower (used for
impurity importance) and a residual-fitting regression grower (used by the
boosted classifier).  Split ties go to the lowest feature index, then the
lowest threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MIN_GAIN = 1e-12
LEAF = -1


@dataclass(frozen=True, eq=False)
class Tree:
    feature: np.ndarray      # LEAF for leaves
    threshold: np.ndarray    # x <= threshold goes left
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray        # leaf output (regression trees only)

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row of ``x``."""
        node = np.zeros(x.shape[0], dtype=np.int64)
        active = self.feature[node] != LEAF
        while np.any(active):
            rows = np.flatnonzero(active)
            cur = node[rows]
            go_left = x[rows, self.feature[cur]] <= self.threshold[cur]
            node[rows] = np.where(go_left, self.left[cur], self.right[cur])
            active = self.feature[node] != LEAF
        return node

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.value[self.apply(x)]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": [float(t) for t in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": [float(v) for v in self.value],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=np.float64),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=np.float64),
        )


class _Builder:
    def __init__(self):
        self.feature, self.threshold, self.left, self.right, self.value = [], [], [], [], []

    def add(self) -> int:
        self.feature.append(LEAF)
        self.threshold.append(0.0)
        self.left.append(LEAF)
        self.right.append(LEAF)
        self.value.append(0.0)
        return len(self.feature) - 1

    def build(self) -> Tree:
        return Tree(
            np.asarray(self.feature, dtype=np.int64),
            np.asarray(self.threshold, dtype=np.float64),
            np.asarray(self.left, dtype=np.int64),
            np.asarray(self.right, dtype=np.int64),
            np.asarray(self.value, dtype=np.float64),
        )


def _sorted_columns(xn: np.ndarray):
    order = np.argsort(xn, axis=0, kind="stable")
    xs = np.take_along_axis(xn, order, axis=0)
    # a threshold between positions i and i+1 exists only if the values differ
    valid = xs[1:] > xs[:-1]
    return order, xs, valid


def _pick(gain: np.ndarray, valid: np.ndarray, xs: np.ndarray, feats: np.ndarray):
    """Best (feature, threshold, gain); ``gain`` and ``valid`` are (m-1, f)."""
    g = np.where(valid, gain, -np.inf).T  # feature-major so argmax favours low feature, low threshold
    flat = int(np.argmax(g))
    fi, pos = divmod(flat, g.shape[1])
    best = g[fi, pos]
    if not np.isfinite(best) or best <= MIN_GAIN:
        return None
    thr = 0.5 * (xs[pos, fi] + xs[pos + 1, fi])
    # guard against midpoint rounding onto the upper value
    if not thr < xs[pos + 1, fi]:
        thr = xs[pos, fi]
    return int(feats[fi]), float(thr), float(best)


def _gini_split(x, y_onehot, idx, feats):
    xn = x[np.ix_(idx, feats)]
    order, xs, valid = _sorted_columns(xn)
    ys = y_onehot[idx][order]                      # (m, f, C)
    left = np.cumsum(ys, axis=0)[:-1]               # (m-1, f, C)
    total = y_onehot[idx].sum(axis=0)
    right = total - left
    m = idx.size
    nl = np.arange(1, m, dtype=np.float64)[:, None]
    nr = m - nl
    # n * gini = n - sum(counts^2) / n
    imp_l = nl - (left ** 2).sum(axis=2) / nl
    imp_r = nr - (right ** 2).sum(axis=2) / nr
    parent = m - (total ** 2).sum() / m
    return _pick(parent - (imp_l + imp_r), valid, xs, feats)


def grow_gini_tree(x, y, n_classes, max_depth, rng, sample_idx, max_features, importance):
    """Grow one classification tree on ``sample_idx`` rows.

    Impurity decrease of every split (weighted by node size, unnormalized) is
    added to ``importance`` in place.
    """
    onehot = np.eye(n_classes)[y]
    n_features = x.shape[1]
    b = _Builder()

    def grow(idx, depth):
        node = b.add()
        counts = onehot[idx].sum(axis=0)
        b.value[node] = float(np.argmax(counts))
        if depth >= max_depth or idx.size < 2 or np.count_nonzero(counts) < 2:
            return node
        if max_features >= n_features:
            feats = np.arange(n_features)
        else:
            feats = np.sort(rng.choice(n_features, size=max_features, replace=False))
        split = _gini_split(x, onehot, idx, feats)
        if split is None:
            return node
        f, thr, gain = split
        importance[f] += gain
        mask = x[idx, f] <= thr
        b.feature[node] = f
        b.threshold[node] = thr
        left = grow(idx[mask], depth + 1)
        right = grow(idx[~mask], depth + 1)
        b.left[node], b.right[node] = left, right
        return node

    grow(np.asarray(sample_idx), 0)
    return b.build()


def _residual_split(x, r, idx):
    xn = x[idx]
    order, xs, valid = _sorted_columns(xn)
    rs = r[idx][order]                              # (m, f)
    sl = np.cumsum(rs, axis=0)[:-1]
    s = r[idx].sum()
    m = idx.size
    nl = np.arange(1, m, dtype=np.float64)[:, None]
    nr = m - nl
    gain = sl ** 2 / nl + (s - sl) ** 2 / nr - s ** 2 / m
    return _pick(gain, valid, xs, np.arange(x.shape[1]))


def grow_residual_tree(x, residual, hessian, max_depth, damping=1e-9):
    """Least-squares tree on ``residual`` with Newton leaf values sum(r) / (sum(h) + damping)."""
    b = _Builder()

    def grow(idx, depth):
        node = b.add()
        b.value[node] = float(residual[idx].sum() / (hessian[idx].sum() + damping))
        if depth >= max_depth or idx.size < 2:
            return node
        split = _residual_split(x, residual, idx)
        if split is None:
            return node
        f, thr, _ = split
        mask = x[idx, f] <= thr
        b.feature[node] = f
        b.threshold[node] = thr
        left = grow(idx[mask], depth + 1)
        right = grow(idx[~mask], depth + 1)
        b.left[node], b.right[node] = left, right
        b.value[node] = 0.0
        return node

    grow(np.arange(x.shape[0]), 0)
    return b.build()
