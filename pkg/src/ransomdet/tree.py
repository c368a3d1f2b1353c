"""Axis-aligned binary decision trees with exact greedy split search.

One grower serves both learners: the forest plugs in :class:`GiniObjective`,
the booster plugs in :class:`NewtonObjective` (gradient/hessian statistics).
Split search runs on per-feature presorted row orderings that are partitioned
stably at every split, so no node ever re-sorts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import EmptyNode, FeatureIndexOutOfRange

GINI = 0
NEWTON = 1

# Splits whose gains lie within this relative band of the best are ties;
# ties go to the lowest feature index, then the lowest threshold.
GAIN_TOL = 1e-12


@dataclass(frozen=True)
class GrowParams:
    max_depth: int = 6
    min_leaf: int = 1
    min_gain: float = 0.0
    feature_subsample: float = 1.0

    def __post_init__(self):
        if int(self.max_depth) < 1:
            raise ValueError("max_depth must be >= 1")
        if int(self.min_leaf) < 1:
            raise ValueError("min_leaf must be >= 1")
        if not self.min_gain >= 0:
            raise ValueError("min_gain must be >= 0")
        if not 0 < self.feature_subsample <= 1:
            raise ValueError("feature_subsample must lie in (0, 1]")

    def n_candidates(self, n_features: int) -> int:
        return max(1, min(n_features, math.ceil(self.feature_subsample * n_features - 1e-9)))


@dataclass(frozen=True)
class SplitCandidate:
    feature_index: int
    threshold: float
    gain: float
    left_count: float
    right_count: float


class GiniObjective:
    """Binary Gini impurity decrease; leaves hold the weighted fraction of label 1."""

    kind = GINI
    lam = 0.0
    gamma = 0.0

    def __init__(self, y, weight=None):
        y = np.asarray(y, dtype=np.float64)
        self.w = np.ones_like(y) if weight is None else np.asarray(weight, dtype=np.float64)
        self.s1 = self.w * y
        self.s2 = self.w

    def leaf_value(self, rows) -> float:
        return float(self.s1[rows].sum() / self.w[rows].sum())


class NewtonObjective:
    """Second-order boosting objective with L2 leaf penalty ``lam`` and split cost ``gamma``."""

    kind = NEWTON

    def __init__(self, grad, hess, lam: float = 1.0, gamma: float = 0.0):
        self.s1 = np.asarray(grad, dtype=np.float64)
        self.s2 = np.asarray(hess, dtype=np.float64)
        self.w = np.ones_like(self.s1)
        self.lam = float(lam)
        self.gamma = float(gamma)

    def leaf_value(self, rows) -> float:
        return float(-self.s1[rows].sum() / (self.s2[rows].sum() + self.lam))


class SortedColumns:
    """Rows of one node, listed once per feature in ascending feature order."""

    def __init__(self, xt: np.ndarray, order: np.ndarray):
        self.xt = xt
        self.order = order

    @classmethod
    def from_matrix(cls, X, rows=None) -> "SortedColumns":
        """Presort ``X`` (n_samples x n_features); ``rows`` restricts to a subset."""
        xt = np.ascontiguousarray(np.asarray(X, dtype=np.float64).T)
        order = np.argsort(xt, axis=1, kind="stable").astype(np.int64)
        if rows is not None:
            keep = np.zeros(xt.shape[1], dtype=bool)
            keep[np.asarray(rows, dtype=np.int64)] = True
            order = order[keep[order]].reshape(xt.shape[0], -1)
        return cls(xt, np.ascontiguousarray(order))

    @property
    def n_features(self) -> int:
        return self.xt.shape[0]

    @property
    def n_rows(self) -> int:
        return self.order.shape[1]

    @property
    def rows(self) -> np.ndarray:
        return self.order[0]

    def nonconstant(self) -> np.ndarray:
        f = np.arange(self.n_features)
        return self.xt[f, self.order[:, 0]] != self.xt[f, self.order[:, -1]]

    def partition(self, go_left) -> tuple["SortedColumns", "SortedColumns"]:
        left, right = _backend.kernels().partition(self.order, go_left)
        return SortedColumns(self.xt, left), SortedColumns(self.xt, right)


def midpoint(a: float, b: float) -> float:
    t = (a + b) / 2.0
    return t if a < t else b


def best_split(columns: SortedColumns, objective, candidate_features, params: GrowParams):
    """Best (feature, threshold) over ``candidate_features``, or None.

    A split qualifies when both sides keep at least ``min_leaf`` weight and
    its gain exceeds ``min_gain``.
    """
    if columns.n_rows < 2 or objective.w[columns.rows].sum() < 2 * params.min_leaf:
        return None
    feats = np.array(sorted(set(int(f) for f in candidate_features)), dtype=np.int64)
    if feats.size == 0:
        return None
    gains = _backend.kernels().split_gains(
        columns.xt, columns.order, feats, objective.s1, objective.s2, objective.w,
        objective.kind, objective.lam, objective.gamma, float(params.min_leaf),
    )
    if gains.size == 0:
        return None
    best = float(gains.max())
    tol = GAIN_TOL * max(1.0, abs(best))
    if not best > params.min_gain + tol:
        return None
    flat = int(np.argmax((gains >= best - tol).ravel()))
    i, j = divmod(flat, gains.shape[1])
    f = int(feats[i])
    ordered = columns.order[f]
    a = float(columns.xt[f, ordered[j]])
    b = float(columns.xt[f, ordered[j + 1]])
    wl = float(objective.w[ordered[: j + 1]].sum())
    wr = float(objective.w[ordered[j + 1:]].sum())
    return SplitCandidate(f, midpoint(a, b), float(gains[i, j]), wl, wr)


def _choose_features(columns: SortedColumns, k: int, rng) -> list[int]:
    d = columns.n_features
    if k >= d:
        return list(range(d))
    nonconstant = columns.nonconstant()
    chosen = []
    for f in rng.permutation(d):
        if nonconstant[f]:
            chosen.append(int(f))
            if len(chosen) == k:
                break
    return chosen


class Tree:
    """Flat preorder node arrays; ``feature == -1`` marks a leaf.

    Samples go left iff ``x[feature] < threshold``.
    """

    def __init__(self, feature, threshold, left, right, value, gain=None, count=None):
        self.feature = np.asarray(feature, dtype=np.int32)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int32)
        self.right = np.asarray(right, dtype=np.int32)
        self.value = np.asarray(value, dtype=np.float64)
        # only known for freshly grown trees
        self.gain = None if gain is None else np.asarray(gain, dtype=np.float64)
        self.count = None if count is None else np.asarray(count, dtype=np.float64)

    @classmethod
    def leaf(cls, value: float) -> "Tree":
        return cls([-1], [0.0], [-1], [-1], [value])

    @classmethod
    def stump(cls, feature: int, threshold: float, left_value: float, right_value: float) -> "Tree":
        return cls([feature, -1, -1], [threshold, 0.0, 0.0], [1, -1, -1], [2, -1, -1],
                   [0.0, left_value, right_value])

    def __len__(self):
        return len(self.feature)

    def __eq__(self, other):
        if not isinstance(other, Tree):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, a), getattr(other, a))
            for a in ("feature", "threshold", "left", "right", "value")
        )

    @property
    def is_leaf(self) -> bool:
        return self.feature[0] < 0

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    @property
    def max_feature(self) -> int:
        return int(self.feature.max())

    def depth(self) -> int:
        best = 0
        stack = [(0, 0)]
        while stack:
            node, d = stack.pop()
            if self.feature[node] < 0:
                best = max(best, d)
            else:
                stack.append((int(self.left[node]), d + 1))
                stack.append((int(self.right[node]), d + 1))
        return best

    def leaf_index(self, x) -> int:
        node = 0
        while self.feature[node] >= 0:
            node = self.left[node] if x[self.feature[node]] < self.threshold[node] else self.right[node]
        return int(node)

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError("X must be two-dimensional")
        if X.shape[1] <= self.max_feature:
            raise FeatureIndexOutOfRange(
                f"tree reads feature {self.max_feature}, input has {X.shape[1]} columns"
            )
        return _backend.kernels().predict_tree(
            self.feature, self.threshold, self.left, self.right, self.value, X
        )

    def to_record(self, node: int = 0) -> dict:
        if self.feature[node] < 0:
            return {"value": float(self.value[node])}
        return {
            "feature_index": int(self.feature[node]),
            "threshold": float(self.threshold[node]),
            "left": self.to_record(int(self.left[node])),
            "right": self.to_record(int(self.right[node])),
        }

    @classmethod
    def from_record(cls, record: dict) -> "Tree":
        feature, threshold, left, right, value = [], [], [], [], []

        def visit(rec):
            i = len(feature)
            if "value" in rec:
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
                value.append(float(rec["value"]))
                return i
            feature.append(int(rec["feature_index"]))
            threshold.append(float(rec["threshold"]))
            left.append(-1)
            right.append(-1)
            value.append(0.0)
            left[i] = visit(rec["left"])
            right[i] = visit(rec["right"])
            return i

        visit(record)
        return cls(feature, threshold, left, right, value)


def predict_one(tree: Tree, features) -> float:
    """Value of the leaf that ``features`` routes to."""
    x = np.asarray(features, dtype=np.float64).reshape(-1)
    node = 0
    while tree.feature[node] >= 0:
        f = int(tree.feature[node])
        if f >= len(x):
            raise FeatureIndexOutOfRange(f"feature {f} requested, vector has {len(x)}")
        node = tree.left[node] if x[f] < tree.threshold[node] else tree.right[node]
    return float(tree.value[node])


def grow(columns: SortedColumns, objective, params: GrowParams, rng=None) -> Tree:
    """Grow a tree depth-first; node ids are assigned in preorder."""
    if columns.n_rows == 0:
        raise EmptyNode("cannot grow a tree on zero samples")
    if rng is None:
        rng = np.random.default_rng(0)
    k = params.n_candidates(columns.n_features)
    n_total = columns.xt.shape[1]

    feature, threshold, left, right, value, gain, count = [], [], [], [], [], [], []
    stack = [(columns, 0, -1, False)]
    while stack:
        cols, depth, parent, is_right = stack.pop()
        node = len(feature)
        if parent >= 0:
            (right if is_right else left)[parent] = node
        rows = cols.rows
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(objective.leaf_value(rows))
        gain.append(0.0)
        count.append(float(objective.w[rows].sum()))

        split = None
        if depth < params.max_depth:
            split = best_split(cols, objective, _choose_features(cols, k, rng), params)
        if split is None:
            continue
        feature[node] = split.feature_index
        threshold[node] = split.threshold
        value[node] = 0.0
        gain[node] = split.gain
        go_left = np.zeros(n_total, dtype=bool)
        go_left[rows] = cols.xt[split.feature_index, rows] < split.threshold
        lcols, rcols = cols.partition(go_left)
        stack.append((rcols, depth + 1, node, True))
        stack.append((lcols, depth + 1, node, False))
    return Tree(feature, threshold, left, right, value, gain, count)


def grow_from_matrix(X, objective, params: GrowParams, rng=None, rows=None) -> Tree:
    return grow(SortedColumns.from_matrix(X, rows), objective, params, rng)
