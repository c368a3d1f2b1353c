"""Gradient-boosted trees for binary classification (second-order logistic objective).

Each round fits a tree to the per-sample gradient ``g = p - y`` and hessian
``h = p (1 - p)`` of the log-loss at the current margins. Splits maximise

    0.5 * (G_L^2 / (H_L + lam) + G_R^2 / (H_R + lam) - G^2 / (H + lam)) - gamma

and leaves take the Newton step ``-G / (H + lam)``, shrunk by the learning
rate when added to the margin.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import Dataset
from .errors import FeatureLengthMismatch, NonFiniteLoss, SingleClassDataset
from .tree import GrowParams, NewtonObjective, SortedColumns, Tree, grow

P_MIN = 1e-15
P_MAX = 1.0 - 1e-15


@dataclass(frozen=True)
class GbdtParams:
    n_rounds: int = 200
    learning_rate: float = 0.1
    reg_lambda: float = 1.0
    gamma: float = 0.0
    base_score: float = 0.5
    grow: GrowParams = field(default_factory=lambda: GrowParams(max_depth=6))
    seed: int = 0

    def __post_init__(self):
        if self.n_rounds < 1:
            raise ValueError("n_rounds must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.reg_lambda < 0 or self.gamma < 0:
            raise ValueError("reg_lambda and gamma must be >= 0")
        if not 0 < self.base_score < 1:
            raise ValueError("base_score must lie in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GbdtParams":
        d = dict(d)
        grow_params = GrowParams(**d.pop("grow", {}))
        return cls(grow=grow_params, **d)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def log_loss(y, margin) -> float:
    """Mean logistic loss with probabilities clamped away from 0 and 1."""
    p = np.clip(sigmoid(np.asarray(margin, dtype=np.float64)), P_MIN, P_MAX)
    y = np.asarray(y, dtype=np.float64)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def gradient_check(y, margin):
    """Gradient and hessian of the logistic loss w.r.t. the margin."""
    p = np.clip(sigmoid(margin), P_MIN, P_MAX)
    return p - y, p * (1.0 - p)


class GbdtModel:
    def __init__(self, params: GbdtParams, trees=(), base_margin=None):
        self.params = params
        self.trees = list(trees)
        self.base_margin = logit(params.base_score) if base_margin is None else float(base_margin)
        self.n_features = None
        self.train_loss: list[float] = []

    def _check(self, X):
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if self.n_features is not None and X.shape[1] != self.n_features:
            raise FeatureLengthMismatch(f"model expects {self.n_features} features, got {X.shape[1]}")
        return X

    def decision_function(self, X) -> np.ndarray:
        X = self._check(X)
        margin = np.full(len(X), self.base_margin)
        eta = self.params.learning_rate
        for tree in self.trees:
            margin += eta * tree.predict(X)
        return margin

    def predict_proba(self, X) -> np.ndarray:
        """Probability of label 1 (legitimate) per row."""
        return sigmoid(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) >= 0.5).astype(np.int8)

    def to_payload(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "base_margin": self.base_margin,
            "n_features": self.n_features,
            "trees": [t.to_record() for t in self.trees],
        }

    @classmethod
    def from_payload(cls, d: dict) -> "GbdtModel":
        model = cls(GbdtParams.from_dict(d["params"]), [Tree.from_record(t) for t in d["trees"]],
                    d["base_margin"])
        model.n_features = d.get("n_features")
        return model


def predict_margin(model: GbdtModel, features) -> float:
    return float(model.decision_function(np.asarray(features, dtype=np.float64).reshape(1, -1))[0])


def predict_proba(model: GbdtModel, features) -> float:
    return float(sigmoid(predict_margin(model, features)))


def train(ds: Dataset, params: GbdtParams = GbdtParams()) -> GbdtModel:
    """Fit a boosted ensemble; stops early when a round cannot split the root."""
    return train_arrays(ds.X, ds.y, params)


def train_arrays(X, y, params: GbdtParams = GbdtParams()) -> GbdtModel:
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(y) == 0 or y.min() == y.max():
        raise SingleClassDataset("boosting needs samples from both classes")
    if not np.isfinite(X).all():
        raise ValueError("features contain NaN or infinite values")

    model = GbdtModel(params)
    model.n_features = X.shape[1]
    rng = np.random.default_rng(params.seed)
    columns = SortedColumns.from_matrix(X)
    margin = np.full(len(y), model.base_margin)
    eta = params.learning_rate
    model.train_loss.append(log_loss(y, margin))
    for _ in range(params.n_rounds):
        g, h = gradient_check(y, margin)
        objective = NewtonObjective(g, h, params.reg_lambda, params.gamma)
        tree = grow(columns, objective, params.grow, rng)
        if tree.is_leaf:
            break
        model.trees.append(tree)
        margin += eta * tree.predict(X)
        loss = log_loss(y, margin)
        if not math.isfinite(loss):
            raise NonFiniteLoss(f"training loss became {loss} after {len(model.trees)} rounds")
        model.train_loss.append(loss)
    return model
