"""Multinomial logistic regression with an L1 penalty, fit by proximal gradient."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateTrainingError, InvalidArgumentError


@dataclass
class LinearModel:
    weights: np.ndarray  # (n_classes, n_features)
    bias: np.ndarray  # (n_classes,)
    l1: float = 0.0
    history: list[float] = field(default_factory=list, compare=False)

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def zeros(cls, n_classes: int, n_features: int, l1: float = 0.0) -> "LinearModel":
        return cls(np.zeros((n_classes, n_features)), np.zeros(n_classes), l1)

    def to_dict(self) -> dict:
        return {
            "l1": float(self.l1),
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        w = np.array(d["weights"], dtype=np.float64)
        b = np.array(d["bias"], dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise InvalidArgumentError("inconsistent logistic model shapes")
        return cls(w, b, float(d["l1"]))


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - np.max(z, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def one_hot(y: np.ndarray, n_classes: int) -> np.ndarray:
    Y = np.zeros((len(y), n_classes))
    Y[np.arange(len(y)), y] = 1.0
    return Y


def smooth_loss(W, b, X, Y) -> float:
    """Mean softmax cross-entropy."""
    return float(-np.mean(np.sum(Y * log_softmax(X @ W.T + b), axis=1)))


def smooth_grad(W, b, X, Y) -> tuple[np.ndarray, np.ndarray]:
    R = (softmax(X @ W.T + b) - Y) / X.shape[0]
    return R.T @ X, R.sum(axis=0)


def objective(model: LinearModel, X, y) -> float:
    Y = one_hot(np.asarray(y), model.n_classes)
    return smooth_loss(model.weights, model.bias, np.asarray(X, float), Y) + model.l1 * float(
        np.abs(model.weights).sum()
    )


def soft_threshold(w: np.ndarray, t: float) -> np.ndarray:
    return np.sign(w) * np.maximum(np.abs(w) - t, 0.0)


def check_training_data(X, y, n_classes=None):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or y.ndim != 1 or len(X) != len(y):
        raise InvalidArgumentError(f"shape mismatch: X {X.shape}, y {y.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidArgumentError("features must be finite")
    y = y.astype(np.int64)
    if len(np.unique(y)) < 2:
        raise DegenerateTrainingError("training data must contain at least two classes")
    if n_classes is None:
        n_classes = int(y.max()) + 1
    if y.min() < 0 or y.max() >= n_classes:
        raise InvalidArgumentError(f"labels must lie in 0..{n_classes - 1}")
    return X, y, n_classes


def train_logistic_l1(
    X,
    y,
    l1: float = 0.01,
    epochs: int = 500,
    step: float = 1.0,
    seed: int = 0,
    n_classes: int | None = None,
) -> LinearModel:
    """Proximal gradient with backtracking on cross-entropy + ``l1 * |W|_1``.

    Full-batch and therefore deterministic; ``seed`` is accepted so every
    trainer shares one signature.  The bias is unpenalised and starts at
    the log class priors.  ``model.history`` holds the objective after
    each epoch and is non-increasing.
    """
    X, y, n_classes = check_training_data(X, y, n_classes)
    Y = one_hot(y, n_classes)
    prior = np.maximum(Y.mean(axis=0), 1e-12)
    W = np.zeros((n_classes, X.shape[1]))
    b = np.log(prior) - np.log(prior).mean()

    def total(W_, b_):
        return smooth_loss(W_, b_, X, Y) + l1 * np.abs(W_).sum()

    f = total(W, b)
    history = [f]
    t = step
    for _ in range(epochs):
        gW, gb = smooth_grad(W, b, X, Y)
        g_smooth = smooth_loss(W, b, X, Y)
        t = min(t * 2.0, 1e6)
        for _ in range(60):
            W_new = soft_threshold(W - t * gW, t * l1)
            b_new = b - t * gb
            dW, db = W_new - W, b_new - b
            bound = (
                g_smooth
                + np.sum(gW * dW)
                + np.sum(gb * db)
                + (np.sum(dW * dW) + np.sum(db * db)) / (2 * t)
            )
            if smooth_loss(W_new, b_new, X, Y) <= bound + 1e-15:
                break
            t *= 0.5
        f_new = total(W_new, b_new)
        if f_new > f:
            # Rounding-level increase near the optimum; keep the current iterate.
            history.append(f)
            continue
        W, b, f = W_new, b_new, f_new
        history.append(f)
    return LinearModel(W, b, l1, history)


def predict_logistic(model: LinearModel, x) -> np.ndarray:
    """Class probabilities for one feature vector or a matrix of them."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.n_features:
        raise InvalidArgumentError(
            f"expected {model.n_features} features, got {x.shape[-1]}"
        )
    return softmax(x @ model.weights.T + model.bias)
