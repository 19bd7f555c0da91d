"""Linear SVM trained in the primal by Pegasos-style subgradient descent."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateTrainingError, InvalidArgumentError


@dataclass
class SvmModel:
    weights: np.ndarray
    bias: float
    C: float = 1.0
    history: list[float] = field(default_factory=list, compare=False)

    def decision(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != len(self.weights):
            raise InvalidArgumentError(
                f"expected {len(self.weights)} features, got {X.shape[-1]}"
            )
        return X @ self.weights + self.bias

    def predict(self, X) -> np.ndarray:
        """Labels in {-1, +1}; a zero margin maps to +1."""
        return np.where(self.decision(X) >= 0, 1, -1)

    def to_dict(self) -> dict:
        return {"C": float(self.C), "weights": self.weights.tolist(), "bias": float(self.bias)}

    @classmethod
    def from_dict(cls, d: dict) -> "SvmModel":
        return cls(np.array(d["weights"], dtype=np.float64), float(d["bias"]), float(d["C"]))


def svm_objective(w, b, X, y, C) -> float:
    """``0.5 |w|^2 + C * sum(hinge(y (w.x + b)))``."""
    margins = y * (X @ w + b)
    return float(0.5 * np.dot(w, w) + C * np.sum(np.maximum(0.0, 1.0 - margins)))


def svm_subgradient(w, b, X, y, C) -> tuple[np.ndarray, float]:
    margins = y * (X @ w + b)
    active = margins < 1.0
    gw = w - C * (y[active, None] * X[active]).sum(axis=0)
    gb = -C * float(y[active].sum())
    return gw, gb


def optimal_bias(w, X, y, C) -> float:
    """Exact minimiser over ``b`` of the objective with ``w`` fixed.

    The objective is convex and piecewise linear in ``b`` with kinks at
    ``y_i - w.x_i``, so the minimum is attained at one of them.
    """
    scores = X @ w
    candidates = np.unique(y - scores)
    hinge = np.maximum(0.0, 1.0 - y[None, :] * (scores[None, :] + candidates[:, None]))
    return float(candidates[int(np.argmin(hinge.sum(axis=1)))])


def train_svm(X, y, C: float = 1.0, epochs: int = 50, seed: int = 0) -> SvmModel:
    """Minimise the primal SVM objective by subgradient steps of size ``1 / (lambda t)``.

    ``lambda = 1 / (C n)`` rescales the objective to the per-sample form.
    Samples are visited in a freshly shuffled order each epoch and the
    iterates of the second half of training are averaged.  During the
    descent the bias rides along as a constant feature; afterwards it is
    replaced by the exact unregularised minimiser given the averaged
    weights.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.shape != (len(X),):
        raise InvalidArgumentError(f"shape mismatch: X {X.shape}, y {y.shape}")
    if not set(np.unique(y)) <= {-1.0, 1.0}:
        raise InvalidArgumentError("SVM labels must be -1 or +1")
    if len(np.unique(y)) < 2:
        raise DegenerateTrainingError("SVM training needs both labels")
    if not C > 0:
        raise InvalidArgumentError("C must be positive")
    n, d = X.shape
    lam = 1.0 / (C * n)
    Xa = np.hstack([X, np.ones((n, 1))])
    rng = np.random.default_rng(seed)
    w = np.zeros(d + 1)
    w_sum = np.zeros(d + 1)
    n_avg = 0
    avg_from = (epochs * n) // 2
    t = 0
    history = []
    for _ in range(epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            violated = y[i] * (Xa[i] @ w) < 1.0
            w *= 1.0 - eta * lam
            if violated:
                w += eta * y[i] * Xa[i]
            if t > avg_from:
                w_sum += w
                n_avg += 1
        current = w_sum / n_avg if n_avg else w
        history.append(svm_objective(current[:d], current[d], X, y, C))
    w_avg = w_sum / max(n_avg, 1)
    weights = w_avg[:d]
    return SvmModel(weights, optimal_bias(weights, X, y, C), C, history)
