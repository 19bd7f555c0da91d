"""Heatmap tensors and image-level fusion.

A heatmap has shape ``(8, 4, rows, cols)``: orientation, class, tile row,
tile column.  Three fusion strategies turn it into an image label:
majority vote over the orientation-averaged class map, and L1 logistic
regression or boosted trees over the class histogram of the eight
per-orientation class maps.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError
from .labels import N_CLASSES, ClassLabel, plurality, severity_argmax, severity_argmax_grid
from .ml import (
    GbmModel,
    LinearModel,
    predict_gbm,
    predict_logistic,
    register,
    train_gbm,
    train_logistic_l1,
)
from .patching import N_ORIENTATIONS, PATCH_SIZE, Patch, crop, grid_origins, orient_array

STRATEGIES = ("mv", "lr", "gbm")
PREDICTOR_IDS = tuple(f"{m}_{s}" for m in ("macenko", "vahadane") for s in STRATEGIES)


def tile_grid(height: int, width: int, size: int = PATCH_SIZE) -> tuple[list[int], list[int]]:
    """Non-overlapping tile starts per axis (x, y), with a final edge-aligned tile."""
    origins = grid_origins(height, width, size, size, clamp_edges=True)
    xs = sorted({o[0] for o in origins})
    ys = sorted({o[1] for o in origins})
    return xs, ys


def heatmap_shape(height: int, width: int, size: int = PATCH_SIZE) -> tuple[int, int, int, int]:
    xs, ys = tile_grid(height, width, size)
    return (N_ORIENTATIONS, N_CLASSES, len(ys), len(xs))


def build_heatmap(image: np.ndarray, classifier, slide_id: str = "", size: int = PATCH_SIZE) -> np.ndarray:
    h, w = image.shape[:2]
    if h < size or w < size:
        raise InvalidArgumentError(f"image {w}x{h} is smaller than one {size}x{size} tile")
    xs, ys = tile_grid(h, w, size)
    heat = np.zeros((N_ORIENTATIONS, N_CLASSES, len(ys), len(xs)))
    batch = getattr(classifier, "classify_orientations", None)
    for r, y in enumerate(ys):
        for c, x in enumerate(xs):
            tile = crop(image, (x, y), size)
            if batch is not None:
                probs = np.asarray(batch(Patch(tile, (x, y), slide_id=slide_id)))
            else:
                probs = np.stack(
                    [
                        classifier.classify_patch(
                            Patch(orient_array(tile, o), (x, y), orientation=o, slide_id=slide_id)
                        )
                        for o in range(N_ORIENTATIONS)
                    ]
                )
            heat[:, :, r, c] = probs
    return heat


def check_heatmap(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 4 or h.shape[:2] != (N_ORIENTATIONS, N_CLASSES):
        raise InvalidArgumentError(f"heatmap must have shape (8, 4, R, C), got {h.shape}")
    return h


def average_class_map(h: np.ndarray) -> np.ndarray:
    """Per-tile argmax of the orientation-averaged probabilities."""
    h = check_heatmap(h)
    return severity_argmax_grid(h.mean(axis=0), axis=0)


def per_orientation_class_maps(h: np.ndarray) -> np.ndarray:
    """``(8, R, C)`` argmax class map for each orientation."""
    h = check_heatmap(h)
    return severity_argmax_grid(h, axis=1)


def majority_vote(class_map) -> ClassLabel:
    m = np.asarray(class_map)
    if m.size == 0:
        raise InvalidArgumentError("class map is empty")
    return ClassLabel(plurality(m))


def class_histogram(maps) -> np.ndarray:
    maps = np.asarray(maps)
    if maps.ndim != 3 or maps.shape[0] != N_ORIENTATIONS:
        raise InvalidArgumentError(f"expected 8 class maps of equal size, got shape {maps.shape}")
    return np.bincount(maps.ravel().astype(np.int64), minlength=N_CLASSES)


def heatmap_histogram(h: np.ndarray) -> np.ndarray:
    return class_histogram(per_orientation_class_maps(h))


@register("fusion")
@dataclass
class FusionModels:
    lr: LinearModel
    gbm: GbmModel

    def predict_lr(self, histogram) -> ClassLabel:
        return ClassLabel(severity_argmax(predict_logistic(self.lr, np.asarray(histogram, float))))

    def predict_gbm(self, histogram) -> ClassLabel:
        return ClassLabel(severity_argmax(predict_gbm(self.gbm, np.asarray(histogram, float))))

    def to_dict(self) -> dict:
        return {"lr": self.lr.to_dict(), "gbm": self.gbm.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "FusionModels":
        return cls(LinearModel.from_dict(d["lr"]), GbmModel.from_dict(d["gbm"]))


def train_fusion_models(
    histograms,
    labels,
    l1: float = 0.01,
    lr_epochs: int = 500,
    num_estimators: int = 280,
    max_depth: int = 4,
    learning_rate: float = 0.9,
    seed: int = 0,
) -> FusionModels:
    """Fit the histogram LR and GBM fusers on raw class counts."""
    X = np.asarray(histograms, dtype=np.float64)
    y = np.array([int(ClassLabel.parse(v)) for v in labels], dtype=np.int64)
    lr = train_logistic_l1(X, y, l1=l1, epochs=lr_epochs, seed=seed, n_classes=N_CLASSES)
    gbm = train_gbm(
        X, y, num_estimators=num_estimators, max_depth=max_depth,
        learning_rate=learning_rate, seed=seed, n_classes=N_CLASSES,
    )
    return FusionModels(lr, gbm)


@dataclass(frozen=True)
class ImagePrediction:
    label: ClassLabel
    source: str
    refined: bool = False

    def __post_init__(self):
        if self.source not in PREDICTOR_IDS + ("ensemble", "refined"):
            raise InvalidArgumentError(f"unknown prediction source {self.source!r}")


def predict_strategies(h: np.ndarray, models: FusionModels, method: str) -> list[ImagePrediction]:
    """The three single-normalisation predictions (MV, LR, GBM) for one heatmap."""
    hist = heatmap_histogram(h)
    return [
        ImagePrediction(majority_vote(average_class_map(h)), f"{method}_mv"),
        ImagePrediction(models.predict_lr(hist), f"{method}_lr"),
        ImagePrediction(models.predict_gbm(hist), f"{method}_gbm"),
    ]


def ensemble_predict(preds: Sequence[ImagePrediction]) -> ImagePrediction:
    """Plurality over the six predictors; ties resolved toward severity."""
    preds = list(preds)
    if len(preds) != len(PREDICTOR_IDS):
        raise InvalidArgumentError(f"ensemble needs exactly 6 predictions, got {len(preds)}")
    return ImagePrediction(ClassLabel(plurality([int(p.label) for p in preds])), "ensemble")


def route_refinement(p: ImagePrediction) -> bool:
    return p.label in (ClassLabel.BENIGN, ClassLabel.NORMAL)


def save_heatmap(path, h: np.ndarray) -> None:
    """``.npy`` dump: the header carries the ``(8, 4, R, C)`` shape, payload is row-major float64."""
    np.save(path, check_heatmap(h), allow_pickle=False)


def load_heatmap(path) -> np.ndarray:
    return check_heatmap(np.load(path, allow_pickle=False))


def write_class_map(path, class_map) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in np.asarray(class_map):
            writer.writerow([ClassLabel(int(v)).slug for v in row])


def write_histogram(path, histogram) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([c.slug for c in ClassLabel])
        writer.writerow([int(v) for v in histogram])
