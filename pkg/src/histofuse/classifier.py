"""Patch classifiers.

Anything with a ``classify_patch(patch) -> (4,) probabilities`` method can
drive heatmap construction.  This module provides the trainable baseline
(stain-concentration features + multinomial L1 logistic regression), an
adapter for probabilities computed elsewhere (e.g. by a CNN), and two
reference classifiers used in tests and experiments.
"""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass
from typing import Iterable, Mapping, Protocol

import numpy as np

from .errors import (
    DegenerateTrainingError,
    InvalidArgumentError,
    MissingProbabilityError,
    ParseError,
)
from .labels import N_CLASSES, ClassLabel
from .ml import LinearModel, predict_logistic, register, train_logistic_l1
from .patching import N_ORIENTATIONS, PATCH_SIZE, Patch, PatchRecord
from .stain import StainMatrix, nnls_concentrations, rgb_to_od

N_FEATURES = 19
H_FRACTION_THRESHOLD = 0.5
LUMINANCE_BINS = 8
PROBABILITY_HEADER = [
    "slide", "x", "y", "orientation", "p_normal", "p_benign", "p_insitu", "p_invasive",
]
RENORMALIZE_TOLERANCE = 0.05

FEATURE_NAMES = (
    [f"h_{s}" for s in ("mean", "std", "p10", "p50", "p90")]
    + [f"e_{s}" for s in ("mean", "std", "p10", "p50", "p90")]
    + ["h_fraction"]
    + [f"lum_bin{i}" for i in range(LUMINANCE_BINS)]
)


class PatchClassifier(Protocol):
    def classify_patch(self, patch: Patch) -> np.ndarray: ...


def check_patch(patch: Patch, size: int = PATCH_SIZE) -> None:
    shape = np.shape(patch.pixels)
    if shape != (size, size, 3):
        raise InvalidArgumentError(f"expected a {size}x{size} RGB patch, got shape {shape}")


def is_probability_vector(p, atol: float = 1e-6) -> bool:
    p = np.asarray(p)
    return p.shape == (N_CLASSES,) and bool(np.all(p >= 0)) and abs(float(p.sum()) - 1.0) <= atol


def extract_patch_features(patch, stains: StainMatrix) -> np.ndarray:
    """19 descriptors: H and E concentration statistics, H-rich fraction, luminance histogram."""
    pixels = patch.pixels if isinstance(patch, Patch) else np.asarray(patch)
    conc = nnls_concentrations(rgb_to_od(pixels), stains).reshape(-1, 2)
    feats = []
    for k in range(2):
        c = conc[:, k]
        p10, p50, p90 = np.percentile(c, [10, 50, 90])
        feats += [c.mean(), c.std(), p10, p50, p90]
    feats.append(np.mean(conc[:, 0] > H_FRACTION_THRESHOLD))
    lum = pixels.reshape(-1, 3).astype(np.float64) @ np.array([0.299, 0.587, 0.114])
    hist, _ = np.histogram(lum, bins=LUMINANCE_BINS, range=(0.0, 256.0))
    feats += list(hist / hist.sum())
    return np.asarray(feats, dtype=np.float64)


@register("baseline")
@dataclass
class BaselineClassifier:
    """Standardised patch features fed to a 4-class L1 logistic regression."""

    stains: StainMatrix
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    model: LinearModel
    patch_size: int = PATCH_SIZE

    @classmethod
    def untrained(cls, stains: StainMatrix, patch_size: int = PATCH_SIZE) -> "BaselineClassifier":
        return cls(
            stains,
            np.zeros(N_FEATURES),
            np.ones(N_FEATURES),
            LinearModel.zeros(N_CLASSES, N_FEATURES),
            patch_size,
        )

    def features(self, patch) -> np.ndarray:
        return (extract_patch_features(patch, self.stains) - self.feature_mean) / self.feature_scale

    def classify_patch(self, patch: Patch) -> np.ndarray:
        check_patch(patch, self.patch_size)
        return predict_logistic(self.model, self.features(patch))

    def classify_orientations(self, patch: Patch) -> np.ndarray:
        # Every feature is a pixel-order statistic, so all 8 orientations score alike.
        return np.tile(self.classify_patch(patch), (N_ORIENTATIONS, 1))

    def to_dict(self) -> dict:
        return {
            "stains": self.stains.matrix.tolist(),
            "feature_mean": self.feature_mean.tolist(),
            "feature_scale": self.feature_scale.tolist(),
            "patch_size": self.patch_size,
            "model": self.model.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BaselineClassifier":
        return cls(
            StainMatrix(np.array(d["stains"])),
            np.array(d["feature_mean"], dtype=np.float64),
            np.array(d["feature_scale"], dtype=np.float64),
            LinearModel.from_dict(d["model"]),
            int(d["patch_size"]),
        )


def standardize_fit(F: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = F.mean(axis=0)
    scale = F.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    return mean, scale


def train_baseline(
    patches: Iterable[Patch],
    stains: StainMatrix,
    l1: float = 0.01,
    epochs: int = 500,
    step: float = 1.0,
    seed: int = 0,
    features: np.ndarray | None = None,
) -> BaselineClassifier:
    """Fit the baseline on labelled patches (``features`` may be precomputed)."""
    patches = list(patches)
    if any(p.label is None for p in patches):
        raise InvalidArgumentError("all training patches must carry a label")
    y = np.array([int(p.label) for p in patches], dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise DegenerateTrainingError("baseline training needs at least two classes")
    if features is None:
        features = np.stack([extract_patch_features(p, stains) for p in patches])
    mean, scale = standardize_fit(features)
    model = train_logistic_l1(
        (features - mean) / scale, y, l1=l1, epochs=epochs, step=step, seed=seed, n_classes=N_CLASSES
    )
    size = patches[0].pixels.shape[0]
    return BaselineClassifier(stains, mean, scale, model, size)


class ExternalProbabilities:
    """Looks up probabilities by (slide, x, y, orientation)."""

    def __init__(self, lookup: Mapping[tuple[str, int, int, int], np.ndarray]):
        self.lookup = dict(lookup)

    def __len__(self) -> int:
        return len(self.lookup)

    def classify_patch(self, patch: Patch) -> np.ndarray:
        try:
            return self.lookup[patch.key]
        except KeyError:
            raise MissingProbabilityError(f"no probabilities for patch {patch.key}") from None


def write_probabilities(path, rows: Iterable[tuple[tuple[str, int, int, int], np.ndarray]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PROBABILITY_HEADER)
        for (slide, x, y, o), p in rows:
            writer.writerow([slide, x, y, o] + [repr(float(v)) for v in p])


def read_probabilities(path) -> dict[tuple[str, int, int, int], np.ndarray]:
    """Parse a probability exchange file, renormalising rows that are slightly off."""
    table = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != PROBABILITY_HEADER:
            raise ParseError(f"expected header {','.join(PROBABILITY_HEADER)}", 1, path)
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != len(PROBABILITY_HEADER):
                raise ParseError(f"expected {len(PROBABILITY_HEADER)} fields, got {len(row)}", lineno, path)
            try:
                key = (row[0], int(row[1]), int(row[2]), int(row[3]))
                p = np.array([float(v) for v in row[4:]])
            except ValueError as exc:
                raise ParseError(f"malformed value: {exc}", lineno, path) from None
            if not np.all(np.isfinite(p)) or np.any(p < 0):
                raise ParseError("probabilities must be finite and non-negative", lineno, path)
            total = float(p.sum())
            if abs(total - 1.0) > RENORMALIZE_TOLERANCE:
                raise ParseError(f"probabilities sum to {total}, not 1", lineno, path)
            if key in table:
                raise ParseError(f"duplicate record for {key}", lineno, path)
            table[key] = p / total
    return table


def load_external_probabilities(manifest: Iterable[PatchRecord], prob_file) -> ExternalProbabilities:
    table = read_probabilities(prob_file)
    lookup = {}
    for rec in manifest:
        if rec.key not in table:
            raise MissingProbabilityError(f"probability file lacks a row for {rec.key}")
        lookup[rec.key] = table[rec.key]
    return ExternalProbabilities(lookup)


class OracleClassifier:
    """Emits the one-hot true slide label for every patch."""

    def __init__(self, truth: Mapping[str, ClassLabel]):
        self.truth = {k: ClassLabel.parse(v) for k, v in truth.items()}

    def classify_patch(self, patch: Patch) -> np.ndarray:
        p = np.zeros(N_CLASSES)
        p[int(self.truth[patch.slide_id])] = 1.0
        return p


class RandomClassifier:
    """Uniform-random probabilities, reproducible per patch key and seed."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def classify_patch(self, patch: Patch) -> np.ndarray:
        digest = hashlib.sha256(repr((self.seed, patch.key)).encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        p = rng.uniform(size=N_CLASSES)
        return p / p.sum()
