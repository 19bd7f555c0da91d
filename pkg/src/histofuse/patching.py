"""Patch extraction, label inheritance, dihedral orientations and colour jitter."""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Iterable, Optional

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv

from .errors import InvalidArgumentError, ParseError
from .labels import ClassLabel

PATCH_SIZE = 512
N_ORIENTATIONS = 8


@dataclass(frozen=True)
class Patch:
    pixels: np.ndarray
    origin: tuple[int, int]  # (x, y) of the top-left corner in the source image
    label: Optional[ClassLabel] = None
    orientation: int = 0
    slide_id: str = ""

    @property
    def key(self) -> tuple[str, int, int, int]:
        return (self.slide_id, int(self.origin[0]), int(self.origin[1]), int(self.orientation))


def grid_starts(dim: int, size: int, stride: int, clamp_edges: bool = True) -> list[int]:
    """Start offsets along one axis; optionally add a final edge-aligned start."""
    if size > dim:
        raise InvalidArgumentError(f"patch size {size} exceeds image dimension {dim}")
    if stride < 1:
        raise InvalidArgumentError("stride must be >= 1")
    starts = list(range(0, dim - size + 1, stride))
    if clamp_edges and starts[-1] != dim - size:
        starts.append(dim - size)
    return starts


def grid_origins(
    height: int, width: int, size: int = PATCH_SIZE, stride: int = 256, clamp_edges: bool = True
) -> list[tuple[int, int]]:
    xs = grid_starts(width, size, stride, clamp_edges)
    ys = grid_starts(height, size, stride, clamp_edges)
    return [(x, y) for y in ys for x in xs]


def crop(image: np.ndarray, origin: tuple[int, int], size: int = PATCH_SIZE) -> np.ndarray:
    x, y = origin
    return image[y : y + size, x : x + size]


def grid_patches(
    image: np.ndarray,
    size: int = PATCH_SIZE,
    stride: int = 256,
    clamp_edges: bool = True,
    slide_id: str = "",
) -> list[Patch]:
    h, w = image.shape[:2]
    return [
        Patch(crop(image, o, size), o, slide_id=slide_id)
        for o in grid_origins(h, w, size, stride, clamp_edges)
    ]


def random_origins(height: int, width: int, count: int, seed, size: int = PATCH_SIZE):
    if count < 0:
        raise InvalidArgumentError("count must be >= 0")
    if size > min(height, width):
        raise InvalidArgumentError(f"patch size {size} exceeds image {width}x{height}")
    rng = np.random.default_rng(seed)
    xs = rng.integers(0, width - size + 1, size=count)
    ys = rng.integers(0, height - size + 1, size=count)
    return [(int(x), int(y)) for x, y in zip(xs, ys)]


def random_patches(
    image: np.ndarray, count: int, seed, size: int = PATCH_SIZE, slide_id: str = ""
) -> list[Patch]:
    h, w = image.shape[:2]
    return [
        Patch(crop(image, o, size), o, slide_id=slide_id)
        for o in random_origins(h, w, count, seed, size)
    ]


def inherit_label(patches: Iterable[Patch], slide_label) -> list[Patch]:
    label = ClassLabel.parse(slide_label)
    return [replace(p, label=label) for p in patches]


def orient_array(pixels: np.ndarray, o: int) -> np.ndarray:
    """Apply dihedral element ``o``: ``o % 4`` quarter turns, then a horizontal flip if ``o >= 4``."""
    if not 0 <= o < N_ORIENTATIONS:
        raise InvalidArgumentError(f"orientation must be in 0..7, got {o}")
    if pixels.shape[0] != pixels.shape[1]:
        raise InvalidArgumentError(f"orientation needs a square patch, got {pixels.shape[:2]}")
    out = np.rot90(pixels, k=o % 4, axes=(0, 1))
    if o >= 4:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


def invert_orientation(o: int) -> int:
    if not 0 <= o < N_ORIENTATIONS:
        raise InvalidArgumentError(f"orientation must be in 0..7, got {o}")
    # Flipped elements are reflections and therefore self-inverse.
    return o if o >= 4 else (4 - o) % 4


def compose_orientations(first: int, second: int) -> int:
    """Orientation equal to applying ``first`` and then ``second``."""
    probe = np.arange(4).reshape(2, 2)
    target = orient_array(orient_array(probe, first), second)
    for o in range(N_ORIENTATIONS):
        if np.array_equal(orient_array(probe, o), target):
            return o
    raise AssertionError("dihedral group not closed")  # pragma: no cover


def apply_orientation(patch: Patch, o: int) -> Patch:
    return replace(patch, pixels=orient_array(patch.pixels, o), orientation=o)


@dataclass(frozen=True)
class JitterParams:
    brightness_delta: float = 5 / 255
    contrast_delta: float = 0.05
    saturation_delta: float = 0.05
    hue_delta: float = 0.02

    def __post_init__(self):
        if min(self.brightness_delta, self.contrast_delta, self.saturation_delta, self.hue_delta) < 0:
            raise InvalidArgumentError("jitter deltas must be >= 0")


def sample_jitter(params: JitterParams, seed) -> tuple[float, float, float, float]:
    rng = np.random.default_rng(seed)
    b = rng.uniform(-params.brightness_delta, params.brightness_delta)
    c = rng.uniform(1 - params.contrast_delta, 1 + params.contrast_delta)
    s = rng.uniform(1 - params.saturation_delta, 1 + params.saturation_delta)
    h = rng.uniform(-params.hue_delta, params.hue_delta)
    return float(b), float(c), float(s), float(h)


def jitter_pixels(
    pixels: np.ndarray, brightness: float, contrast: float, saturation: float, hue: float
) -> np.ndarray:
    """Brightness add, contrast about mean luminance, then HSV saturation scale and hue shift."""
    x = pixels.astype(np.float64) / 255.0
    x = x + brightness
    if contrast != 1.0:
        mean_lum = float(np.mean(x @ np.array([0.299, 0.587, 0.114])))
        x = (x - mean_lum) * contrast + mean_lum
    x = np.clip(x, 0.0, 1.0)
    if saturation != 1.0 or hue != 0.0:
        hsv = rgb_to_hsv(x)
        hsv[..., 1] = np.clip(hsv[..., 1] * saturation, 0.0, 1.0)
        hsv[..., 0] = np.mod(hsv[..., 0] + hue, 1.0)
        x = hsv_to_rgb(hsv)
    return np.clip(np.floor(x * 255.0 + 0.5), 0, 255).astype(np.uint8)


def color_jitter(patch: Patch, params: JitterParams = JitterParams(), seed=0) -> Patch:
    return replace(patch, pixels=jitter_pixels(patch.pixels, *sample_jitter(params, seed)))


MANIFEST_HEADER = ["slide", "x", "y", "orientation", "label"]


@dataclass(frozen=True)
class PatchRecord:
    slide: str
    x: int
    y: int
    orientation: int
    label: Optional[ClassLabel] = None

    @property
    def key(self) -> tuple[str, int, int, int]:
        return (self.slide, self.x, self.y, self.orientation)


def write_patch_manifest(path, records: Iterable[PatchRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for r in records:
            writer.writerow(
                [r.slide, r.x, r.y, r.orientation, "" if r.label is None else int(r.label)]
            )


def read_patch_manifest(path) -> list[PatchRecord]:
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise ParseError(f"expected header {','.join(MANIFEST_HEADER)}", 1, path)
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            try:
                slide, x, y, o, label = row
                rec = PatchRecord(
                    slide, int(x), int(y), int(o), ClassLabel(int(label)) if label else None
                )
            except ValueError as exc:
                raise ParseError(f"malformed manifest row: {exc}", lineno, path) from None
            if not 0 <= rec.orientation < N_ORIENTATIONS:
                raise ParseError(f"orientation {rec.orientation} out of range", lineno, path)
            records.append(rec)
    return records
