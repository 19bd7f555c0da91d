import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from histofuse.classifier import OracleClassifier
from histofuse.errors import DegenerateTrainingError, InvalidArgumentError
from histofuse.fusion import (
    PREDICTOR_IDS,
    FusionModels,
    ImagePrediction,
    average_class_map,
    build_heatmap,
    class_histogram,
    ensemble_predict,
    heatmap_histogram,
    heatmap_shape,
    load_heatmap,
    majority_vote,
    per_orientation_class_maps,
    predict_strategies,
    route_refinement,
    save_heatmap,
    train_fusion_models,
)
from histofuse.labels import ClassLabel
from histofuse.ml import dumps_model, loads_model
from histofuse.patching import orient_array
from oracles import (
    average_map_oracle,
    histogram_oracle,
    orientation_maps_oracle,
    random_heatmap,
    vote_oracle,
)

N, B, IS, IV = ClassLabel


class Constant:
    def __init__(self, p):
        self.p = np.asarray(p, float)

    def classify_patch(self, patch):
        return self.p


class CornerProbe:
    """Orientation-sensitive: puts its mass on class 3 only when the marked corner is top-left."""

    def classify_patch(self, patch):
        return np.array([0, 0, 0, 1.0]) if patch.pixels[0, 0, 0] == 255 else np.array([1.0, 0, 0, 0])


def filled(h, v):
    t = np.zeros((8, 4) + h)
    t[:, v] = 1.0
    return t


# --- heatmap ---------------------------------------------------------------

def test_heatmap_shape_full_size():
    assert heatmap_shape(1536, 2040) == (8, 4, 3, 4)


def test_heatmap_of_minimum_image():
    img = np.zeros((512, 512, 3), dtype=np.uint8)
    h = build_heatmap(img, Constant([1, 0, 0, 0]))
    assert h.shape == (8, 4, 1, 1)
    assert np.all(h[:, 0] == 1) and np.all(h[:, 1:] == 0)


def test_heatmap_small_image_rejected():
    with pytest.raises(InvalidArgumentError):
        build_heatmap(np.zeros((100, 600, 3), dtype=np.uint8), Constant([1, 0, 0, 0]))


def test_heatmap_full_size_constant_and_normalised():
    img = np.zeros((1536, 2040, 3), dtype=np.uint8)
    h = build_heatmap(img, Constant([0.1, 0.2, 0.3, 0.4]))
    assert h.shape == (8, 4, 3, 4)
    assert np.allclose(h.sum(axis=1), 1.0, atol=1e-6)


def test_heatmap_records_each_orientation():
    img = np.zeros((64, 64, 3), dtype=np.uint8)
    img[0, 0] = 255
    h = build_heatmap(img, CornerProbe(), size=64)
    # the identity and the main-diagonal reflection fix the top-left corner
    marked = [o for o in range(8) if orient_array(img, o)[0, 0, 0] == 255]
    assert len(marked) == 2 and 0 in marked
    for o in range(8):
        assert h[o, 3, 0, 0] == (1.0 if o in marked else 0.0)


def test_heatmap_with_oracle_classifier():
    img = np.zeros((600, 1100, 3), dtype=np.uint8)
    h = build_heatmap(img, OracleClassifier({"x": IS}), slide_id="x")
    assert average_class_map(h).tolist() == [[2, 2, 2], [2, 2, 2]]


# --- class maps ------------------------------------------------------------

def test_all_invasive_map():
    assert np.all(average_class_map(filled((3, 4), 3)) == 3)


def test_average_tie_goes_to_benign():
    h = np.tile(np.array([0.3, 0.3, 0.2, 0.2])[None, :, None, None], (8, 1, 1, 1))
    assert average_class_map(h)[0, 0] == B


def test_orientation_maps_of_constant_tensor_identical():
    maps = per_orientation_class_maps(filled((3, 4), 1))
    assert maps.shape == (8, 3, 4)
    assert all(np.array_equal(maps[0], m) for m in maps)


def test_only_orientation_zero_differs():
    h = filled((3, 4), 0)
    h[0] = 0
    h[0, 2] = 1.0
    maps = per_orientation_class_maps(h)
    assert np.all(maps[0] == 2) and np.all(maps[1:] == 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(1, 5))
def test_maps_and_histogram_match_oracles(seed, rows, cols):
    h = random_heatmap(np.random.default_rng(seed), rows, cols)
    assert average_class_map(h).tolist() == average_map_oracle(h)
    maps = per_orientation_class_maps(h)
    assert maps.tolist() == orientation_maps_oracle(h)
    hist = class_histogram(maps)
    assert hist.tolist() == histogram_oracle(orientation_maps_oracle(h))
    assert hist.sum() == 8 * rows * cols


def test_histogram_all_in_situ():
    maps = np.full((8, 3, 4), int(IS))
    assert class_histogram(maps).tolist() == [0, 0, 96, 0]


def test_histogram_dimension_mismatch():
    with pytest.raises(InvalidArgumentError):
        class_histogram(np.zeros((7, 3, 4), dtype=int))


def test_orientation_invariant_classifier_consistency(rng):
    h1 = random_heatmap(rng)[:1]
    h = np.repeat(h1, 8, axis=0)
    maps = per_orientation_class_maps(h)
    assert all(np.array_equal(maps[0], m) for m in maps)
    avg = average_class_map(h)
    counts = np.bincount(avg.ravel(), minlength=4)
    assert np.array_equal(heatmap_histogram(h), 8 * counts)


# --- voting ----------------------------------------------------------------

def test_vote_examples():
    assert majority_vote(np.full((3, 4), int(IS))) == IS
    cells = [0] * 5 + [1] * 4 + [2] * 2 + [3]
    assert majority_vote(np.array(cells).reshape(3, 4)) == N
    assert majority_vote(np.array([1] * 6 + [0] * 6).reshape(3, 4)) == B


def test_vote_empty_rejected():
    with pytest.raises(InvalidArgumentError):
        majority_vote(np.zeros((0, 0), dtype=int))


@settings(max_examples=200)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=30), st.randoms())
def test_vote_matches_oracle_and_ignores_order(cells, rnd):
    expected = vote_oracle(cells)
    assert majority_vote(np.array(cells)) == expected
    shuffled = list(cells)
    rnd.shuffle(shuffled)
    assert majority_vote(np.array(shuffled)) == expected


def preds(labels):
    return [ImagePrediction(ClassLabel(l), s) for l, s in zip(labels, PREDICTOR_IDS)]


def test_ensemble_examples():
    assert ensemble_predict(preds([IV] * 6)).label == IV
    assert ensemble_predict(preds([IV, IV, IS, IS, IS, B])).label == IS
    assert ensemble_predict(preds([B, B, B, N, N, N])).label == B
    assert ensemble_predict(preds([N] * 6)).source == "ensemble"


def test_ensemble_arity():
    with pytest.raises(InvalidArgumentError):
        ensemble_predict(preds([IV] * 5))


@given(st.lists(st.integers(0, 3), min_size=6, max_size=6), st.permutations(range(6)))
def test_ensemble_matches_oracle_and_is_permutation_invariant(labels, perm):
    p = preds(labels)
    out = ensemble_predict(p).label
    assert out == vote_oracle(labels)
    assert ensemble_predict([p[i] for i in perm]).label == out


def test_routing():
    assert route_refinement(ImagePrediction(B, "ensemble"))
    assert route_refinement(ImagePrediction(N, "ensemble"))
    assert not route_refinement(ImagePrediction(IV, "ensemble"))
    assert not route_refinement(ImagePrediction(IS, "ensemble"))


def test_unknown_source_rejected():
    with pytest.raises(InvalidArgumentError):
        ImagePrediction(N, "mystery")


# --- learned fusion --------------------------------------------------------

def separable_histograms(rng, per_class=8):
    X, y = [], []
    for label in range(4):
        for _ in range(per_class):
            rest = rng.multinomial(40, np.ones(3) / 3)
            h = np.insert(rest, label, 56)
            X.append(h)
            y.append(label)
    return np.array(X), np.array(y)


def test_fusion_models_fit_separable_histograms(rng):
    X, y = separable_histograms(rng)
    models = train_fusion_models(X, y, num_estimators=30)
    assert [models.predict_lr(x) for x in X] == list(y)
    assert [models.predict_gbm(x) for x in X] == list(y)


def test_fusion_training_is_deterministic(rng):
    X, y = separable_histograms(rng)
    a = train_fusion_models(X, y, num_estimators=10)
    b = train_fusion_models(X, y, num_estimators=10)
    assert dumps_model(a) == dumps_model(b)
    again = loads_model(dumps_model(a), "fusion")
    assert isinstance(again, FusionModels)
    assert dumps_model(again) == dumps_model(a)


def test_fusion_single_class_rejected():
    with pytest.raises(DegenerateTrainingError):
        train_fusion_models(np.ones((4, 4)), [1, 1, 1, 1])


def test_predict_strategies_sources(rng):
    X, y = separable_histograms(rng)
    models = train_fusion_models(X, y, num_estimators=10)
    out = predict_strategies(filled((3, 4), 3), models, "vahadane")
    assert [p.source for p in out] == ["vahadane_mv", "vahadane_lr", "vahadane_gbm"]
    assert all(p.label == IV for p in out)


def test_heatmap_file_round_trip(tmp_path, rng):
    h = random_heatmap(rng)
    save_heatmap(tmp_path / "h.npy", h)
    assert np.array_equal(load_heatmap(tmp_path / "h.npy"), h)
