from dataclasses import replace

import numpy as np
import pytest

from histofuse.config import parse_config
from histofuse.data import CorpusSpec, DatasetManifest, Slide, generate_synthetic_corpus, write_image
from histofuse.errors import InvalidArgumentError
from histofuse.fusion import ImagePrediction
from histofuse.labels import ClassLabel
from histofuse.pipeline import PipelineError, predict_slide, run_pipeline

SMALL = CorpusSpec(per_class=14, width=256, height=192)
CONFIG = parse_config(
    "[patching]\nsize = 128\nstride = 64\npatches_per_slide = 8\n"
    "[fusion]\nnum_estimators = 20\n[refinement]\ngbm_estimators = 20\n"
)


def explicit_manifest(slides, n_train):
    """First ``n_train`` slides of each class train, the rest test."""
    out = []
    for label in ClassLabel:
        mine = [s for s in slides if s.label == label]
        out += [replace(s, split="train" if i < n_train else "test") for i, s in enumerate(mine)]
    return DatasetManifest(out)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    return root, generate_synthetic_corpus(root / "data", SMALL, seed=4)


def with_classifier(config, kind):
    return replace(config, run=replace(config.run, classifier=kind))


def test_random_classifier_is_near_chance(corpus):
    root, slides = corpus
    manifest = explicit_manifest(slides, 4)
    results, report = run_pipeline(manifest, with_classifier(CONFIG, "random"), root / "random")
    assert report.total == 40
    assert 0.10 <= report.accuracy <= 0.45


def test_oracle_is_perfect_and_routing_is_confined(corpus):
    root, slides = corpus
    manifest = explicit_manifest(slides, 10)
    results, report = run_pipeline(manifest, with_classifier(CONFIG, "oracle"), root / "oracle")
    assert report.accuracy == 1.0
    assert np.array_equal(report.table, np.diag(np.diag(report.table)))
    for r in results:
        assert r.routed == (r.ensemble.label in (ClassLabel.BENIGN, ClassLabel.NORMAL))
        if not r.routed:
            assert r.final == r.ensemble


def test_failures_carry_the_slide_id(corpus, tmp_path):
    root, slides = corpus
    blank = tmp_path / "blank.tif"
    write_image(blank, np.full((192, 256, 3), 255, np.uint8))
    manifest = explicit_manifest(slides, 10)
    manifest.slides.append(Slide("n999", str(blank), ClassLabel.NORMAL, "test"))
    with pytest.raises(PipelineError) as err:
        run_pipeline(manifest, with_classifier(CONFIG, "oracle"), tmp_path / "out")
    assert err.value.slide_id == "n999"
    assert "n999" in str(err.value)


def test_unrouted_predictions_pass_through():
    h = np.zeros((8, 4, 1, 1))
    h[:, 3] = 1.0

    class Fixed:
        def __init__(self, label):
            self.label = label

        def predict_lr(self, hist):
            return self.label

        predict_gbm = predict_lr

    fusion = {"macenko": Fixed(ClassLabel.INVASIVE), "vahadane": Fixed(ClassLabel.INVASIVE)}

    def explode(_):
        raise AssertionError("refinement must not run for invasive predictions")

    r = predict_slide("iv001", {"macenko": h, "vahadane": h}, fusion, object(), explode)
    assert r.final == ImagePrediction(ClassLabel.INVASIVE, "ensemble") and not r.routed


def test_ensemble_needs_both_methods():
    h = np.zeros((8, 4, 1, 1))
    with pytest.raises(InvalidArgumentError):
        predict_slide("x", {"macenko": h}, {}, None, None)
