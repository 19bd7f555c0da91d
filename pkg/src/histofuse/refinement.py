"""Benign-vs-normal second stage.

Image features are the 19 patch descriptors of every non-overlapping tile,
pooled by mean and standard deviation (38 values).  Three binary models
(boosted trees, linear SVM, L1 logistic regression) vote 2-of-3.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .classifier import FEATURE_NAMES, N_FEATURES, extract_patch_features, standardize_fit
from .errors import DegenerateTrainingError, InvalidArgumentError, ParseError
from .fusion import tile_grid
from .labels import ClassLabel
from .ml import (
    GbmModel,
    LinearModel,
    SvmModel,
    predict_gbm,
    predict_logistic,
    register,
    train_gbm,
    train_logistic_l1,
    train_svm,
)
from .patching import PATCH_SIZE, crop
from .stain import StainMatrix

N_REFINEMENT_FEATURES = 2 * N_FEATURES
BINARY_LABELS = (ClassLabel.BENIGN, ClassLabel.NORMAL)
REFINEMENT_FEATURE_NAMES = [f"{n}_mean" for n in FEATURE_NAMES] + [f"{n}_std" for n in FEATURE_NAMES]


def _binary(label) -> int:
    """benign -> 1, normal -> 0."""
    label = ClassLabel.parse(label)
    if label not in BINARY_LABELS:
        raise InvalidArgumentError(f"refinement labels must be benign or normal, got {label.slug}")
    return int(label == ClassLabel.BENIGN)


def tile_features(image: np.ndarray, stains: StainMatrix, size: int = PATCH_SIZE) -> np.ndarray:
    h, w = image.shape[:2]
    if h < size or w < size:
        raise InvalidArgumentError(f"image {w}x{h} is smaller than one {size}x{size} tile")
    xs, ys = tile_grid(h, w, size)
    return np.stack(
        [extract_patch_features(crop(image, (x, y), size), stains) for y in ys for x in xs]
    )


def pool_tile_features(per_tile: np.ndarray) -> np.ndarray:
    return np.concatenate([per_tile.mean(axis=0), per_tile.std(axis=0)])


def extract_refinement_features(
    image: np.ndarray, stains: StainMatrix, size: int = PATCH_SIZE
) -> np.ndarray:
    return pool_tile_features(tile_features(image, stains, size))


@register("refinement")
@dataclass
class RefinementModels:
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    gbm: GbmModel
    svm: SvmModel
    lr: LinearModel

    def _z(self, features) -> np.ndarray:
        f = np.asarray(features, dtype=np.float64)
        if f.shape[-1] != len(self.feature_mean):
            raise InvalidArgumentError(
                f"expected {len(self.feature_mean)} features, got {f.shape[-1]}"
            )
        return (f - self.feature_mean) / self.feature_scale

    def votes(self, features) -> list[ClassLabel]:
        z = self._z(features)
        raw = [
            int(np.argmax(predict_gbm(self.gbm, z))),
            int(self.svm.predict(z[None, :])[0] > 0),
            int(np.argmax(predict_logistic(self.lr, z))),
        ]
        return [ClassLabel.BENIGN if v == 1 else ClassLabel.NORMAL for v in raw]

    def to_dict(self) -> dict:
        return {
            "feature_mean": self.feature_mean.tolist(),
            "feature_scale": self.feature_scale.tolist(),
            "gbm": self.gbm.to_dict(),
            "svm": self.svm.to_dict(),
            "lr": self.lr.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RefinementModels":
        return cls(
            np.array(d["feature_mean"], dtype=np.float64),
            np.array(d["feature_scale"], dtype=np.float64),
            GbmModel.from_dict(d["gbm"]),
            SvmModel.from_dict(d["svm"]),
            LinearModel.from_dict(d["lr"]),
        )


@dataclass(frozen=True)
class RefinementHyper:
    gbm_estimators: int = 280
    gbm_depth: int = 4
    gbm_learning_rate: float = 0.9
    svm_C: float = 1.0
    svm_epochs: int = 50
    lr_l1: float = 0.01
    lr_epochs: int = 500
    seed: int = 0


def train_refinement(features, labels: Iterable, hyper: RefinementHyper = RefinementHyper()) -> RefinementModels:
    F = np.asarray(features, dtype=np.float64)
    y = np.array([_binary(v) for v in labels], dtype=np.int64)
    if F.ndim != 2 or len(F) != len(y):
        raise InvalidArgumentError(f"shape mismatch: features {F.shape}, labels {y.shape}")
    if len(np.unique(y)) < 2:
        raise DegenerateTrainingError("refinement training needs both benign and normal images")
    mean, scale = standardize_fit(F)
    Z = (F - mean) / scale
    gbm = train_gbm(
        Z, y, hyper.gbm_estimators, hyper.gbm_depth, hyper.gbm_learning_rate, hyper.seed, n_classes=2
    )
    svm = train_svm(Z, np.where(y == 1, 1.0, -1.0), hyper.svm_C, hyper.svm_epochs, hyper.seed)
    lr = train_logistic_l1(Z, y, hyper.lr_l1, hyper.lr_epochs, seed=hyper.seed, n_classes=2)
    return RefinementModels(mean, scale, gbm, svm, lr)


def vote(labels: Iterable[ClassLabel]) -> ClassLabel:
    labels = list(labels)
    if len(labels) != 3:
        raise InvalidArgumentError("refinement vote needs exactly three predictions")
    benign = sum(1 for v in labels if ClassLabel.parse(v) == ClassLabel.BENIGN)
    return ClassLabel.BENIGN if benign >= 2 else ClassLabel.NORMAL


def refine_predict(features, models: RefinementModels) -> ClassLabel:
    return vote(models.votes(features))


FeatureExtractor = Callable[[np.ndarray, StainMatrix], np.ndarray]


def write_feature_dump(path, rows: Iterable[tuple[str, np.ndarray, ClassLabel | None]]) -> None:
    """One row per image: slide id, label, then the 38 pooled features."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["slide", "label"] + REFINEMENT_FEATURE_NAMES)
        for slide, feats, label in rows:
            writer.writerow(
                [slide, "" if label is None else ClassLabel.parse(label).slug]
                + [repr(float(v)) for v in feats]
            )


def read_feature_dump(path) -> list[tuple[str, np.ndarray, ClassLabel | None]]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["slide", "label"]:
            raise ParseError("not a refinement feature dump", 1, path)
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", lineno, path)
            try:
                label = ClassLabel.parse(row[1]) if row[1] else None
                rows.append((row[0], np.array([float(v) for v in row[2:]]), label))
            except ValueError as exc:
                raise ParseError(str(exc), lineno, path) from None
    return rows
