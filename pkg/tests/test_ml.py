import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from histofuse.errors import DegenerateTrainingError, InvalidArgumentError, ModelFormatError
from histofuse.ml import (
    GbmModel,
    LinearModel,
    RegressionTree,
    SvmModel,
    dumps_model,
    load_model,
    loads_model,
    predict_gbm,
    predict_logistic,
    save_model,
    train_gbm,
    train_logistic_l1,
    train_svm,
)
from histofuse.ml.gbm import fit_regression_tree
from histofuse.ml.logistic import objective, one_hot, smooth_grad, smooth_loss, soft_threshold
from histofuse.ml.svm import optimal_bias, svm_objective, svm_subgradient


def blobs(rng, n_per=20, d=3, k=4, spread=0.3):
    centres = rng.normal(0, 3, (k, d))
    X = np.concatenate([c + spread * rng.standard_normal((n_per, d)) for c in centres])
    y = np.repeat(np.arange(k), n_per)
    return X, y


def separable_2d(rng, n=40, margin=1.0):
    """Two clusters on either side of x0 + x1 = 0, at least ``margin`` away from it."""
    pts = []
    labels = []
    while len(pts) < n:
        p = rng.uniform(-5, 5, 2)
        dist = (p[0] + p[1]) / math.sqrt(2)
        if abs(dist) >= margin:
            pts.append(p)
            labels.append(1 if dist > 0 else -1)
    return np.array(pts), np.array(labels)


# --- logistic regression ---------------------------------------------------

def test_zero_model_is_uniform():
    assert np.allclose(predict_logistic(LinearModel.zeros(4, 5), np.ones(5)), 0.25)


def test_predict_sums_to_one_and_is_monotone():
    m = LinearModel(np.array([[0.0, 0.0], [1.5, 0.0]]), np.zeros(2))
    lo, hi = predict_logistic(m, np.array([[0.0, 1.0], [1.0, 1.0]]))
    assert hi[1] > lo[1]
    assert abs(lo.sum() - 1) < 1e-9 and abs(hi.sum() - 1) < 1e-9


def test_predict_dimension_mismatch():
    with pytest.raises(InvalidArgumentError):
        predict_logistic(LinearModel.zeros(2, 3), np.ones(4))


def test_separable_two_class_without_penalty(rng):
    X, y = separable_2d(rng)
    m = train_logistic_l1(X, (y > 0).astype(int), l1=0.0, epochs=300)
    assert np.mean(np.argmax(predict_logistic(m, X), axis=1) == (y > 0)) == 1.0


def finite_difference_error(rng, n=15, d=4, k=3, h=1e-6):
    X = rng.standard_normal((n, d))
    Y = one_hot(rng.integers(0, k, n), k)
    W = rng.standard_normal((k, d))
    b = rng.standard_normal(k)
    gW, gb = smooth_grad(W, b, X, Y)
    num_W = np.zeros_like(W)
    for idx in np.ndindex(W.shape):
        E = np.zeros_like(W)
        E[idx] = h
        num_W[idx] = (smooth_loss(W + E, b, X, Y) - smooth_loss(W - E, b, X, Y)) / (2 * h)
    num_b = np.zeros_like(b)
    for j in range(k):
        e = np.zeros_like(b)
        e[j] = h
        num_b[j] = (smooth_loss(W, b + e, X, Y) - smooth_loss(W, b - e, X, Y)) / (2 * h)
    analytic = np.concatenate([gW.ravel(), gb])
    numeric = np.concatenate([num_W.ravel(), num_b])
    return np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_gradient_matches_finite_differences(seed):
    assert finite_difference_error(np.random.default_rng(seed)) <= 1e-5


def test_soft_threshold_shrinks_by_exact_amount():
    w = np.array([-3.0, -0.2, 0.0, 0.1, 2.5])
    out = soft_threshold(w, 0.5)
    assert np.allclose(np.abs(w) - np.abs(out), np.minimum(np.abs(w), 0.5))
    assert np.all(np.sign(out) * np.sign(w) >= 0)


@given(arrays(np.float64, 12, elements=st.floats(-100, 100)), st.floats(0, 50))
def test_soft_threshold_property(w, t):
    out = soft_threshold(w, t)
    assert np.allclose(np.abs(w) - np.abs(out), np.minimum(np.abs(w), t))


def test_large_penalty_keeps_weights_zero(rng):
    X, y = blobs(rng)
    Y = one_hot(y, 4)
    prior = Y.mean(axis=0)
    b0 = np.log(prior) - np.log(prior).mean()
    gW, _ = smooth_grad(np.zeros((4, 3)), b0, X, Y)
    m = train_logistic_l1(X, y, l1=np.abs(gW).max() * 1.0001, epochs=50)
    assert np.all(m.weights == 0)


def test_lr_history_non_increasing_and_fits(rng):
    X, y = blobs(rng)
    m = train_logistic_l1(X, y, l1=0.01, epochs=200)
    assert np.all(np.diff(m.history) <= 0)
    assert m.history[-1] == pytest.approx(objective(m, X, y))
    assert np.mean(np.argmax(predict_logistic(m, X), axis=1) == y) == 1.0


def test_lr_deterministic(rng):
    X, y = blobs(rng)
    a, b = train_logistic_l1(X, y, epochs=50, seed=3), train_logistic_l1(X, y, epochs=50, seed=3)
    assert dumps_model(a) == dumps_model(b)


def test_lr_errors():
    with pytest.raises(DegenerateTrainingError):
        train_logistic_l1(np.ones((3, 2)), [0, 0, 0])
    with pytest.raises(InvalidArgumentError):
        train_logistic_l1(np.ones((3, 2)), [0, 1])


# --- gradient boosting -----------------------------------------------------

def test_stump_solves_threshold_data():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    y = np.array([0, 0, 1, 1])
    m = train_gbm(X, y, num_estimators=1, max_depth=1, learning_rate=0.9)
    tree = m.trees[0][0]
    assert tree.feature[0] == 0 and tree.threshold[0] == 1.5
    assert tree.value[tree.left[0]] == pytest.approx(0.5)
    assert tree.value[tree.right[0]] == pytest.approx(-0.5)
    assert np.array_equal(np.argmax(predict_gbm(m, X), axis=1), y)


def test_zero_estimators_predict_prior(rng):
    X, y = blobs(rng)
    y = y[: 50]
    m = train_gbm(X[:50], y, num_estimators=0)
    prior = np.bincount(y, minlength=4) / len(y)
    assert np.allclose(predict_gbm(m, X[:5]), prior[: m.n_classes])


def test_zero_learning_rate_predicts_prior(rng):
    X, y = blobs(rng)
    m = train_gbm(X, y, num_estimators=3, learning_rate=0.0)
    assert np.allclose(predict_gbm(m, X), 0.25)


def test_hand_traced_two_tree_model():
    stump = RegressionTree(
        np.array([0, -1, -1]), np.array([1.0, 0, 0]), np.array([1, -1, -1]),
        np.array([2, -1, -1]), np.array([0.0, 2.0, -2.0]),
    )
    leaf = RegressionTree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), np.array([0.4]))
    m = GbmModel(2, 1, 0.5, 1, np.array([0.0, 0.2]), [[stump, leaf]])
    # x = 0: scores (0 + 0.5*2, 0.2 + 0.5*0.4) = (1.0, 0.4)
    p = predict_gbm(m, np.array([0.0]))
    assert p[0] == pytest.approx(1 / (1 + math.exp(-0.6)), abs=1e-12)
    # x = 5: scores (-1.0, 0.4)
    p = predict_gbm(m, np.array([5.0]))
    assert p[1] == pytest.approx(1 / (1 + math.exp(-1.4)), abs=1e-12)
    assert abs(p.sum() - 1) < 1e-9


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gbm_training_loss_monotone(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((40, 3))
    y = rng.integers(0, 3, 40)
    if len(np.unique(y)) < 2:
        y[0], y[1] = 0, 1
    m = train_gbm(X, y, num_estimators=20, max_depth=3)
    assert np.all(np.diff(m.history) <= 1e-12)
    assert all(t.depth() <= 3 for rt in m.trees for t in rt)


def test_gbm_split_tie_break_prefers_lowest_feature():
    X = np.array([[0.0, 0.0], [1.0, 1.0]])
    tree = fit_regression_tree(X, np.array([1.0, -1.0]), 1)
    assert tree.feature[0] == 0 and tree.threshold[0] == 0.5


def test_gbm_default_hyperparameters():
    m = train_gbm(np.array([[0.0], [1.0]]), [0, 1])
    assert m.num_estimators == 280 and m.max_depth == 4 and m.learning_rate == 0.9


# --- SVM ---------------------------------------------------------------------

def test_svm_separable_margin_set(rng):
    X, y = separable_2d(rng)
    m = train_svm(X, y, C=1.0, epochs=50)
    assert np.all(m.predict(X) == y)
    assert svm_objective(m.weights, m.bias, X, y, 1.0) <= svm_objective(np.zeros(2), 0.0, X, y, 1.0)


def test_svm_deterministic(rng):
    X, y = separable_2d(rng)
    assert dumps_model(train_svm(X, y, seed=4)) == dumps_model(train_svm(X, y, seed=4))


def test_svm_errors():
    with pytest.raises(DegenerateTrainingError):
        train_svm(np.ones((3, 2)), np.ones(3))
    with pytest.raises(InvalidArgumentError):
        train_svm(np.ones((3, 2)), np.array([0, 1, 1]))


@pytest.mark.parametrize("seed", range(5))
def test_svm_subgradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((10, 3))
    y = rng.choice([-1.0, 1.0], 10)
    w, b = rng.standard_normal(3), 0.3
    margins = y * (X @ w + b)
    assert np.all(np.abs(margins - 1) > 1e-3)  # away from kinks
    gw, gb = svm_subgradient(w, b, X, y, 2.0)
    h = 1e-7
    num = [
        (svm_objective(w + h * e, b, X, y, 2.0) - svm_objective(w - h * e, b, X, y, 2.0)) / (2 * h)
        for e in np.eye(3)
    ]
    num_b = (svm_objective(w, b + h, X, y, 2.0) - svm_objective(w, b - h, X, y, 2.0)) / (2 * h)
    assert np.allclose(gw, num, rtol=1e-5, atol=1e-7)
    assert gb == pytest.approx(num_b, rel=1e-5, abs=1e-7)


def test_optimal_bias_beats_grid(rng):
    X = rng.standard_normal((25, 2))
    y = rng.choice([-1.0, 1.0], 25)
    w = rng.standard_normal(2)
    b = optimal_bias(w, X, y, 1.0)
    grid = min(svm_objective(w, g, X, y, 1.0) for g in np.linspace(-5, 5, 2001))
    assert svm_objective(w, b, X, y, 1.0) <= grid + 1e-12


# --- persistence -------------------------------------------------------------

@pytest.fixture(scope="module")
def trained_models():
    rng = np.random.default_rng(7)
    X, y = blobs(rng)
    Xs, ys = separable_2d(rng)
    return {
        "logistic": (train_logistic_l1(X, y, epochs=40), lambda m, v: predict_logistic(m, v), 3),
        "gbm": (train_gbm(X, y, num_estimators=5), lambda m, v: predict_gbm(m, v), 3),
        "svm": (train_svm(Xs, ys, epochs=5), lambda m, v: m.decision(v), 2),
    }


@pytest.mark.parametrize("kind", ["logistic", "gbm", "svm"])
def test_round_trip_predicts_identically(kind, trained_models, tmp_path):
    model, predict, d = trained_models[kind]
    path = tmp_path / f"{kind}.json"
    save_model(model, path)
    back = load_model(path, kind)
    V = np.random.default_rng(0).normal(0, 3, (100, d))
    assert np.array_equal(predict(back, V), predict(model, V))
    assert dumps_model(back) == dumps_model(model)


def test_version_mismatch_and_bad_files(trained_models):
    text = dumps_model(trained_models["svm"][0])
    with pytest.raises(ModelFormatError):
        loads_model(text.replace('"version": 1', '"version": 2'))
    with pytest.raises(ModelFormatError):
        loads_model(text.replace("histofuse-model", "other"))
    with pytest.raises(ModelFormatError):
        loads_model("{not json")
    with pytest.raises(ModelFormatError):
        loads_model(text, "gbm")


def test_svm_model_type():
    m = SvmModel(np.array([1.0, -1.0]), 0.0)
    assert m.predict(np.array([[1.0, 1.0], [0.0, 2.0]])).tolist() == [1, -1]
