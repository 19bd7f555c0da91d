"""End-to-end orchestration over a working directory.

Each stage reads its inputs from and writes its outputs to ``out``::

    manifest.csv  config.ini
    profiles/<method>.txt
    normalized/<method>/<slide>.tif
    patches/train.csv  patches/inference.csv
    models/baseline_<method>.json  models/fusion_<method>.json  models/refinement.json
    heatmaps/<method>/<slide>.npy (+ _classmap.csv, _hist.csv)
    features/refinement.csv
    predictions.csv  report.txt  report.json

:func:`run_pipeline` chains all stages; the CLI exposes them one by one.
"""
from __future__ import annotations

import csv
import logging
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .classifier import (
    BaselineClassifier,
    OracleClassifier,
    RandomClassifier,
    extract_patch_features,
    load_external_probabilities,
    train_baseline,
)
from .config import PipelineConfig
from .data import DatasetManifest, Slide, read_image, subseed, write_image
from .errors import HistofuseError, InvalidArgumentError, ParseError
from .evaluation import EvaluationReport, evaluate
from .fusion import (
    PREDICTOR_IDS,
    FusionModels,
    ImagePrediction,
    average_class_map,
    build_heatmap,
    ensemble_predict,
    heatmap_histogram,
    load_heatmap,
    predict_strategies,
    route_refinement,
    save_heatmap,
    tile_grid,
    train_fusion_models,
    write_class_map,
    write_histogram,
)
from .labels import ClassLabel
from .ml import load_model, save_model
from .patching import (
    N_ORIENTATIONS,
    JitterParams,
    Patch,
    PatchRecord,
    crop,
    grid_origins,
    jitter_pixels,
    orient_array,
    random_origins,
    read_patch_manifest,
    sample_jitter,
    write_patch_manifest,
)
from .refinement import (
    RefinementHyper,
    RefinementModels,
    extract_refinement_features,
    refine_predict,
    train_refinement,
    write_feature_dump,
)
from .stain import StainProfile, fit_target_profile, normalize

log = logging.getLogger(__name__)


class PipelineError(HistofuseError):
    def __init__(self, slide_id: str, stage: str, cause: Exception):
        self.slide_id = slide_id
        self.stage = stage
        super().__init__(f"[{stage}] slide {slide_id}: {cause}")


@contextmanager
def slide_context(slide_id: str, stage: str):
    try:
        yield
    except PipelineError:
        raise
    except (HistofuseError, ValueError, KeyError, OSError) as exc:
        raise PipelineError(slide_id, stage, exc) from exc


def stain_kwargs(config: PipelineConfig, method: str) -> dict:
    s = config.stain
    if method == "macenko":
        return {"od_threshold": s.od_threshold, "angle_percentile": s.angle_percentile}
    return {
        "od_threshold": s.od_threshold,
        "sparsity": s.sparsity,
        "max_outer_iters": s.max_outer_iters,
        "tol": s.tol,
        "max_pixels": s.max_pixels,
    }


def refinement_method(config: PipelineConfig) -> str:
    return "vahadane" if "vahadane" in config.run.methods else config.run.methods[0]


class Workspace:
    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _dir(self, *parts) -> Path:
        d = self.root.joinpath(*parts)
        d.mkdir(parents=True, exist_ok=True)
        return d

    @property
    def manifest(self) -> Path:
        return self.root / "manifest.csv"

    @property
    def config(self) -> Path:
        return self.root / "config.ini"

    def profile(self, method: str) -> Path:
        return self._dir("profiles") / f"{method}.txt"

    def normalized(self, method: str, slide_id: str) -> Path:
        return self._dir("normalized", method) / f"{slide_id}.tif"

    def patches(self, kind: str) -> Path:
        return self._dir("patches") / f"{kind}.csv"

    def model(self, name: str) -> Path:
        return self._dir("models") / f"{name}.json"

    def heatmap(self, method: str, slide_id: str) -> Path:
        return self._dir("heatmaps", method) / f"{slide_id}.npy"

    def features(self, name: str) -> Path:
        return self._dir("features") / f"{name}.csv"

    @property
    def predictions(self) -> Path:
        return self.root / "predictions.csv"

    @property
    def report_txt(self) -> Path:
        return self.root / "report.txt"

    @property
    def report_json(self) -> Path:
        return self.root / "report.json"


def prepare(ws: Workspace, manifest: DatasetManifest, config: PipelineConfig) -> None:
    manifest.save(ws.manifest)
    config.save(ws.config)


def _target_image(manifest: DatasetManifest, target: str) -> np.ndarray:
    try:
        return read_image(manifest.get(target).path)
    except KeyError:
        if Path(target).is_file():
            return read_image(target)
    raise InvalidArgumentError(f"target {target!r} is neither a slide id nor an image path")


def fit_targets(ws: Workspace, manifest: DatasetManifest, config: PipelineConfig, methods=None) -> dict[str, StainProfile]:
    image = _target_image(manifest, config.run.target)
    profiles = {}
    for method in methods or config.run.methods:
        with slide_context(config.run.target, f"fit-target/{method}"):
            profiles[method] = fit_target_profile(image, method, **stain_kwargs(config, method))
        profiles[method].save(ws.profile(method))
    return profiles


def normalize_slides(
    ws: Workspace, manifest: DatasetManifest, config: PipelineConfig, methods=None, slides=None
) -> None:
    slides = list(slides if slides is not None else manifest.slides)
    for method in methods or config.run.methods:
        profile = StainProfile.load(ws.profile(method))
        for slide in slides:
            with slide_context(slide.slide_id, f"normalize/{method}"):
                out = normalize(read_image(slide.path), method, profile, **stain_kwargs(config, method))
                write_image(ws.normalized(method, slide.slide_id), out)
        log.info("normalised %d slides with %s", len(slides), method)


def training_patch_records(
    manifest: DatasetManifest, config: PipelineConfig, splits=("train",)
) -> list[PatchRecord]:
    """Strided grid patches plus random patches up to ``patches_per_slide``, each with a random orientation."""
    pc = config.patching
    records = []
    for slide in manifest.by_split(*splits):
        h, w = read_image(slide.path).shape[:2]
        origins = grid_origins(h, w, pc.size, pc.stride)
        n_random = max(0, pc.patches_per_slide - len(origins))
        origins += random_origins(h, w, n_random, subseed(config.run.seed, "patches", slide.slide_id), pc.size)
        rng = np.random.default_rng(subseed(config.run.seed, "orient", slide.slide_id))
        for (x, y), o in zip(origins, rng.integers(0, N_ORIENTATIONS, len(origins))):
            records.append(PatchRecord(slide.slide_id, x, y, int(o), slide.label))
    return records


def inference_patch_records(manifest: DatasetManifest, size: int = 512, slides=None) -> list[PatchRecord]:
    records = []
    for slide in slides if slides is not None else manifest.slides:
        h, w = read_image(slide.path).shape[:2]
        xs, ys = tile_grid(h, w, size)
        for y in ys:
            for x in xs:
                for o in range(N_ORIENTATIONS):
                    records.append(PatchRecord(slide.slide_id, x, y, o, None))
    return records


def extract_patches(ws: Workspace, manifest: DatasetManifest, config: PipelineConfig) -> None:
    write_patch_manifest(ws.patches("train"), training_patch_records(manifest, config))
    write_patch_manifest(ws.patches("inference"), inference_patch_records(manifest, config.patching.size))


def _training_features(ws, records, method, profile, config):
    pc = config.patching
    params = JitterParams(pc.brightness_delta, pc.contrast_delta, pc.saturation_delta, pc.hue_delta)
    cache: dict[str, np.ndarray] = {}
    feats, patches = [], []
    for i, rec in enumerate(records):
        if rec.slide not in cache:
            cache.clear()
            cache[rec.slide] = read_image(ws.normalized(method, rec.slide))
        with slide_context(rec.slide, f"train-baseline/{method}"):
            pixels = orient_array(crop(cache[rec.slide], (rec.x, rec.y), pc.size), rec.orientation)
            jitter = sample_jitter(params, subseed(config.run.seed, "jitter", method, i, *rec.key))
            pixels = jitter_pixels(pixels, *jitter)
            feats.append(extract_patch_features(pixels, profile.stain_matrix))
        # Only labels and sizes are needed downstream; keep the patch payload light.
        patches.append(Patch(pixels[:1, :1], (rec.x, rec.y), rec.label, rec.orientation, rec.slide))
    return np.stack(feats), patches


def train_baselines(ws: Workspace, config: PipelineConfig, methods=None) -> dict[str, BaselineClassifier]:
    records = read_patch_manifest(ws.patches("train"))
    if any(r.label is None for r in records):
        raise ParseError("training patch manifest has unlabeled rows", path=ws.patches("train"))
    models = {}
    for method in methods or config.run.methods:
        profile = StainProfile.load(ws.profile(method))
        feats, patches = _training_features(ws, records, method, profile, config)
        bc = config.baseline
        model = train_baseline(
            patches, profile.stain_matrix, bc.l1, bc.epochs, bc.step,
            seed=subseed(config.run.seed, "baseline", method), features=feats,
        )
        model.patch_size = config.patching.size
        save_model(model, ws.model(f"baseline_{method}"))
        models[method] = model
    return models


def make_classifier(ws: Workspace, manifest: DatasetManifest, config: PipelineConfig, method: str, external_probs=None):
    if external_probs is not None:
        records = inference_patch_records(manifest, config.patching.size)
        return load_external_probabilities(records, external_probs)
    kind = config.run.classifier
    if kind == "baseline":
        return load_model(ws.model(f"baseline_{method}"), "baseline")
    if kind == "oracle":
        return OracleClassifier(manifest.truth())
    if kind == "random":
        return RandomClassifier(subseed(config.run.seed, "random-classifier"))
    raise InvalidArgumentError(f"unknown classifier kind {kind!r}")


def heatmap_slides(manifest: DatasetManifest, config: PipelineConfig) -> list[Slide]:
    splits = set(config.run.fusion_splits) | set(config.run.eval_splits)
    return [s for s in manifest.slides if s.split in splits]


def build_heatmaps(
    ws: Workspace,
    manifest: DatasetManifest,
    config: PipelineConfig,
    methods=None,
    classifier=None,
    external_probs: dict | None = None,
) -> None:
    for method in methods or config.run.methods:
        clf = classifier
        if clf is None:
            clf = make_classifier(ws, manifest, config, method, (external_probs or {}).get(method))
        for slide in heatmap_slides(manifest, config):
            with slide_context(slide.slide_id, f"build-heatmaps/{method}"):
                image = read_image(ws.normalized(method, slide.slide_id))
                h = build_heatmap(image, clf, slide.slide_id, config.patching.size)
            path = ws.heatmap(method, slide.slide_id)
            save_heatmap(path, h)
            write_class_map(path.with_name(f"{slide.slide_id}_classmap.csv"), average_class_map(h))
            write_histogram(path.with_name(f"{slide.slide_id}_hist.csv"), heatmap_histogram(h))


def train_fusion(ws: Workspace, manifest: DatasetManifest, config: PipelineConfig, methods=None) -> dict[str, FusionModels]:
    fc = config.fusion
    models = {}
    slides = manifest.by_split(*config.run.fusion_splits)
    for method in methods or config.run.methods:
        hists = [heatmap_histogram(load_heatmap(ws.heatmap(method, s.slide_id))) for s in slides]
        models[method] = train_fusion_models(
            hists, [s.label for s in slides], fc.l1, fc.lr_epochs, fc.num_estimators,
            fc.max_depth, fc.learning_rate, seed=subseed(config.run.seed, "fusion", method),
        )
        save_model(models[method], ws.model(f"fusion_{method}"))
    return models


def refinement_features(ws: Workspace, config: PipelineConfig, slide_id: str) -> np.ndarray:
    method = refinement_method(config)
    profile = StainProfile.load(ws.profile(method))
    with slide_context(slide_id, "refinement-features"):
        image = read_image(ws.normalized(method, slide_id))
        return extract_refinement_features(image, profile.stain_matrix, config.patching.size)


def train_refinement_stage(ws: Workspace, manifest: DatasetManifest, config: PipelineConfig) -> RefinementModels:
    slides = [
        s for s in manifest.by_split(*config.run.refinement_splits)
        if s.label in (ClassLabel.BENIGN, ClassLabel.NORMAL)
    ]
    feats = np.stack([refinement_features(ws, config, s.slide_id) for s in slides]) if slides else np.zeros((0, 38))
    write_feature_dump(ws.features("refinement"), [(s.slide_id, f, s.label) for s, f in zip(slides, feats)])
    rc = config.refinement
    hyper = RefinementHyper(
        rc.gbm_estimators, rc.gbm_depth, rc.gbm_learning_rate, rc.svm_C, rc.svm_epochs,
        rc.lr_l1, rc.lr_epochs, subseed(config.run.seed, "refinement"),
    )
    models = train_refinement(feats, [s.label for s in slides], hyper)
    save_model(models, ws.model("refinement"))
    return models


@dataclass(frozen=True)
class SlidePrediction:
    slide_id: str
    truth: ClassLabel | None
    predictions: tuple[ImagePrediction, ...]
    ensemble: ImagePrediction
    routed: bool
    final: ImagePrediction


PREDICTION_HEADER = ["slide", "truth", *PREDICTOR_IDS, "ensemble", "routed", "final"]


def predict_slide(
    slide_id: str,
    heatmaps: dict[str, np.ndarray],
    fusion: dict[str, FusionModels],
    refinement: RefinementModels | None,
    features_fn,
    truth: ClassLabel | None = None,
) -> SlidePrediction:
    if not {"macenko", "vahadane"} <= set(heatmaps):
        raise InvalidArgumentError("the six-way ensemble needs both macenko and vahadane heatmaps")
    preds = []
    for method in ("macenko", "vahadane"):
        preds += predict_strategies(heatmaps[method], fusion[method], method)
    ens = ensemble_predict(preds)
    routed = route_refinement(ens)
    final = ens
    if routed and refinement is not None:
        final = ImagePrediction(refine_predict(features_fn(slide_id), refinement), "refined", refined=True)
    return SlidePrediction(slide_id, truth, tuple(preds), ens, routed, final)


def predict(ws: Workspace, manifest: DatasetManifest, config: PipelineConfig) -> list[SlidePrediction]:
    fusion = {m: load_model(ws.model(f"fusion_{m}"), "fusion") for m in config.run.methods}
    refinement = load_model(ws.model("refinement"), "refinement") if ws.model("refinement").exists() else None
    results = []
    for slide in manifest.by_split(*config.run.eval_splits):
        with slide_context(slide.slide_id, "predict"):
            heatmaps = {m: load_heatmap(ws.heatmap(m, slide.slide_id)) for m in config.run.methods}
            results.append(
                predict_slide(
                    slide.slide_id, heatmaps, fusion, refinement,
                    lambda sid: refinement_features(ws, config, sid), slide.label,
                )
            )
    write_predictions(ws.predictions, results)
    return results


def write_predictions(path, results: Iterable[SlidePrediction]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PREDICTION_HEADER)
        for r in results:
            writer.writerow(
                [r.slide_id, "" if r.truth is None else r.truth.slug]
                + [p.label.slug for p in r.predictions]
                + [r.ensemble.label.slug, int(r.routed), r.final.label.slug]
            )


def read_predictions(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != PREDICTION_HEADER:
            raise ParseError("not a predictions file", 1, path)
        return list(reader)


def evaluate_predictions(ws: Workspace, predictions_path=None, truth: dict | None = None) -> EvaluationReport:
    rows = read_predictions(predictions_path or ws.predictions)
    labels = []
    for r in rows:
        t = truth[r["slide"]] if truth is not None else r["truth"]
        if t in ("", None):
            raise InvalidArgumentError(f"no ground truth for slide {r['slide']}")
        labels.append(t)
    report = evaluate([r["final"] for r in rows], labels)
    ws.report_txt.write_text(report.to_text())
    ws.report_json.write_text(report.to_json())
    return report


def run_pipeline(
    manifest: DatasetManifest,
    config: PipelineConfig,
    out,
    classifier=None,
    external_probs: dict | None = None,
) -> tuple[list[SlidePrediction], EvaluationReport]:
    """Train every stage on the configured splits and evaluate on ``eval_splits``.

    ``classifier`` overrides the patch classifier for both normalisations;
    otherwise ``config.run.classifier`` decides (the baseline is trained on
    the training split's patches).
    """
    ws = Workspace(out)
    prepare(ws, manifest, config)
    fit_targets(ws, manifest, config)
    needed = {s.slide_id for s in heatmap_slides(manifest, config)}
    needed |= {s.slide_id for s in manifest.by_split(*config.run.refinement_splits, "train")}
    normalize_slides(ws, manifest, config, slides=[s for s in manifest.slides if s.slide_id in needed])
    if classifier is None and external_probs is None and config.run.classifier == "baseline":
        write_patch_manifest(ws.patches("train"), training_patch_records(manifest, config))
        train_baselines(ws, config)
    build_heatmaps(ws, manifest, config, classifier=classifier, external_probs=external_probs)
    train_fusion(ws, manifest, config)
    train_refinement_stage(ws, manifest, config)
    results = predict(ws, manifest, config)
    return results, evaluate_predictions(ws)
