"""Gradient-boosted regression trees with a softmax loss.

One tree per class per round is fit to the residual ``y_onehot - p`` with
exact greedy variance-reduction splits.  Leaves hold the mean residual.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgumentError
from .logistic import check_training_data, log_softmax, one_hot, softmax

MIN_GAIN = 1e-12


@dataclass
class RegressionTree:
    """Flat array tree; ``feature[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def depth(self) -> int:
        def d(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(d(self.left[i]), d(self.right[i]))

        return d(0)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        node = np.zeros(len(X), dtype=np.int64)
        while True:
            feat = self.feature[node]
            internal = feat >= 0
            if not internal.any():
                return self.value[node]
            idx = np.nonzero(internal)[0]
            go_left = X[idx, feat[idx]] <= self.threshold[node[idx]]
            node[idx] = np.where(go_left, self.left[node[idx]], self.right[node[idx]])

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        return cls(
            np.array(d["feature"], dtype=np.int64),
            np.array(d["threshold"], dtype=np.float64),
            np.array(d["left"], dtype=np.int64),
            np.array(d["right"], dtype=np.int64),
            np.array(d["value"], dtype=np.float64),
        )


def _best_split(X: np.ndarray, r: np.ndarray):
    """Best (feature, threshold, gain); ties go to the lowest feature, then lowest threshold."""
    m = len(r)
    if m < 2:
        return None
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    rs = r[order]
    left_sum = np.cumsum(rs, axis=0)[:-1]
    total = r.sum()
    n_left = np.arange(1, m, dtype=np.float64)[:, None]
    n_right = m - n_left
    gain = left_sum**2 / n_left + (total - left_sum) ** 2 / n_right - total**2 / m
    valid = xs[:-1] < xs[1:]
    gain = np.where(valid, gain, -np.inf)
    # Feature-major flattening makes argmax prefer lower features, then lower thresholds.
    flat = gain.T.ravel()
    best = int(np.argmax(flat))
    best_gain = flat[best]
    if not best_gain > MIN_GAIN:
        return None
    f, i = divmod(best, m - 1)
    lo, hi = xs[i, f], xs[i + 1, f]
    thr = lo + (hi - lo) / 2.0
    if not lo <= thr < hi:
        thr = lo
    return f, float(thr), float(best_gain)


def fit_regression_tree(X: np.ndarray, r: np.ndarray, max_depth: int) -> RegressionTree:
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    def build(node, idx, depth):
        value[node] = float(r[idx].mean())
        if depth >= max_depth:
            return
        split = _best_split(X[idx], r[idx])
        if split is None:
            return
        f, thr, _ = split
        mask = X[idx, f] <= thr
        feature[node] = f
        threshold[node] = thr
        left[node] = new_node()
        right[node] = new_node()
        build(left[node], idx[mask], depth + 1)
        build(right[node], idx[~mask], depth + 1)

    build(new_node(), np.arange(len(r)), 0)
    return RegressionTree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value, dtype=np.float64),
    )


@dataclass
class GbmModel:
    n_classes: int
    n_features: int
    learning_rate: float
    max_depth: int
    init_scores: np.ndarray
    trees: list[list[RegressionTree]] = field(default_factory=list)  # rounds x classes
    history: list[float] = field(default_factory=list, compare=False)

    @property
    def num_estimators(self) -> int:
        return len(self.trees)

    def raw_scores(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        F = np.tile(self.init_scores, (len(X), 1))
        for round_trees in self.trees:
            for k, tree in enumerate(round_trees):
                F[:, k] += self.learning_rate * tree.predict(X)
        return F

    def to_dict(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "n_features": self.n_features,
            "learning_rate": float(self.learning_rate),
            "max_depth": self.max_depth,
            "init_scores": self.init_scores.tolist(),
            "trees": [[t.to_dict() for t in rt] for rt in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GbmModel":
        return cls(
            int(d["n_classes"]),
            int(d["n_features"]),
            float(d["learning_rate"]),
            int(d["max_depth"]),
            np.array(d["init_scores"], dtype=np.float64),
            [[RegressionTree.from_dict(t) for t in rt] for rt in d["trees"]],
        )


def log_loss(F: np.ndarray, Y: np.ndarray) -> float:
    return float(-np.mean(np.sum(Y * log_softmax(F), axis=1)))


def train_gbm(
    X,
    y,
    num_estimators: int = 280,
    max_depth: int = 4,
    learning_rate: float = 0.9,
    seed: int = 0,
    n_classes: int | None = None,
) -> GbmModel:
    """Softmax gradient boosting; exact greedy splits make it deterministic (``seed`` unused)."""
    X, y, n_classes = check_training_data(X, y, n_classes)
    if num_estimators < 0 or max_depth < 0:
        raise InvalidArgumentError("num_estimators and max_depth must be >= 0")
    Y = one_hot(y, n_classes)
    prior = np.maximum(Y.mean(axis=0), 1e-12)
    init = np.log(prior)
    F = np.tile(init, (len(X), 1))
    model = GbmModel(n_classes, X.shape[1], float(learning_rate), max_depth, init)
    model.history.append(log_loss(F, Y))
    for _ in range(num_estimators):
        residual = Y - softmax(F)
        round_trees = []
        for k in range(n_classes):
            tree = fit_regression_tree(X, residual[:, k], max_depth)
            round_trees.append(tree)
        for k, tree in enumerate(round_trees):
            F[:, k] += learning_rate * tree.predict(X)
        model.trees.append(round_trees)
        model.history.append(log_loss(F, Y))
    return model


def predict_gbm(model: GbmModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.n_features:
        raise InvalidArgumentError(f"expected {model.n_features} features, got {x.shape[-1]}")
    p = softmax(model.raw_scores(x))
    return p[0] if x.ndim == 1 else p
