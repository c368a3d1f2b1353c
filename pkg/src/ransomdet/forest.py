"""Bagged random forest with Gini trees and hard majority vote."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import Dataset
from .errors import FeatureLengthMismatch, SingleClassDataset
from .tree import GiniObjective, GrowParams, SortedColumns, Tree, grow

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    x = (x + GOLDEN_GAMMA) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def tree_seed(master: int, index: int) -> int:
    """Per-tree seed: splitmix64 of ``master + index * GOLDEN_GAMMA`` (mod 2**64)."""
    return splitmix64((master + index * GOLDEN_GAMMA) & MASK64)


def bootstrap_weights(n: int, rng) -> np.ndarray:
    """Multiplicity of each row in an n-out-of-n draw with replacement."""
    return np.bincount(rng.integers(0, n, size=n), minlength=n).astype(np.float64)


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    bootstrap: bool = True
    # None: ceil(sqrt(d)) features per split
    feature_subsample: float | None = None
    grow: GrowParams = field(default_factory=lambda: GrowParams(max_depth=32))
    seed: int = 0
    # label chosen when votes (or a leaf) split evenly; 0 = malware
    tie_label: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.feature_subsample is not None and not 0 < self.feature_subsample <= 1:
            raise ValueError("feature_subsample must lie in (0, 1]")
        if self.tie_label not in (0, 1):
            raise ValueError("tie_label must be 0 or 1")

    def split_params(self, n_features: int) -> GrowParams:
        fs = self.feature_subsample
        if fs is None:
            fs = math.ceil(math.sqrt(n_features)) / n_features
        g = self.grow
        return GrowParams(g.max_depth, g.min_leaf, g.min_gain, fs)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ForestParams":
        d = dict(d)
        grow_params = GrowParams(**d.pop("grow", {}))
        return cls(grow=grow_params, **d)


class ForestModel:
    def __init__(self, params: ForestParams, trees=()):
        self.params = params
        self.trees = list(trees)
        self.n_features = None

    def _check(self, X):
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if self.n_features is not None and X.shape[1] != self.n_features:
            raise FeatureLengthMismatch(f"model expects {self.n_features} features, got {X.shape[1]}")
        return X

    def leaf_values(self, X) -> np.ndarray:
        """(n_trees, n_samples) fraction of label 1 in the reached leaf."""
        X = self._check(X)
        return np.stack([t.predict(X) for t in self.trees])

    def predict_proba(self, X) -> np.ndarray:
        """Mean leaf fraction of label 1 (legitimate)."""
        return self.leaf_values(X).mean(axis=0)

    def predict(self, X) -> np.ndarray:
        return majority_vote(self.leaf_values(X), self.params.tie_label)

    def to_payload(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "n_features": self.n_features,
            "trees": [t.to_record() for t in self.trees],
        }

    @classmethod
    def from_payload(cls, d: dict) -> "ForestModel":
        model = cls(ForestParams.from_dict(d["params"]), [Tree.from_record(t) for t in d["trees"]])
        model.n_features = d.get("n_features")
        return model


def tree_votes(leaf_values: np.ndarray, tie_label: int = 0) -> np.ndarray:
    votes = (leaf_values > 0.5).astype(np.int8)
    votes[leaf_values == 0.5] = tie_label
    return votes


def majority_vote(leaf_values: np.ndarray, tie_label: int = 0) -> np.ndarray:
    """Each tree votes its leaf's majority label; an even split goes to ``tie_label``."""
    votes = tree_votes(np.atleast_2d(leaf_values), tie_label)
    ones = votes.sum(axis=0).astype(np.int64)
    n = votes.shape[0]
    out = np.where(2 * ones > n, 1, 0).astype(np.int8)
    out[2 * ones == n] = tie_label
    return out


def predict(model: ForestModel, features) -> int:
    return int(model.predict(np.asarray(features, dtype=np.float64).reshape(1, -1))[0])


def predict_proba(model: ForestModel, features) -> float:
    return float(model.predict_proba(np.asarray(features, dtype=np.float64).reshape(1, -1))[0])


def train(ds: Dataset, params: ForestParams = ForestParams(), n_jobs: int = 1) -> ForestModel:
    return train_arrays(ds.X, ds.y, params, n_jobs)


def train_arrays(X, y, params: ForestParams = ForestParams(), n_jobs: int = 1) -> ForestModel:
    """Grow ``n_trees`` trees on bootstrap resamples.

    Tree ``i`` depends only on the data and ``tree_seed(seed, i)``, so the
    result is identical for any ``n_jobs``.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(y) == 0 or y.min() == y.max():
        raise SingleClassDataset("forest needs samples from both classes")
    if not np.isfinite(X).all():
        raise ValueError("features contain NaN or infinite values")
    n, d = X.shape
    split_params = params.split_params(d)
    base = SortedColumns.from_matrix(X)

    def build(i):
        rng = np.random.default_rng(tree_seed(params.seed, i))
        weight = None
        cols = base
        if params.bootstrap:
            weight = bootstrap_weights(n, rng)
            keep = weight > 0
            cols = SortedColumns(base.xt, base.order[keep[base.order]].reshape(d, -1))
        return grow(cols, GiniObjective(y, weight), split_params, rng)

    if n_jobs == 1:
        trees = [build(i) for i in range(params.n_trees)]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs if n_jobs > 0 else None) as pool:
            trees = list(pool.map(build, range(params.n_trees)))
    model = ForestModel(params, trees)
    model.n_features = d
    return model
