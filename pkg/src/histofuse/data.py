"""Dataset ingestion, stratified splits, image IO and the synthetic H&E corpus."""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy.ndimage import gaussian_filter

from .errors import HistofuseError, InvalidArgumentError, ParseError
from .labels import FILE_PREFIX, ClassLabel
from .stain import REFERENCE_STAINS, StainMatrix, render

IMAGE_SUFFIXES = (".tif", ".tiff", ".png")
SPLITS = ("train", "val", "test")
DEFAULT_FRACTIONS = (0.7, 0.2, 0.1)
CLASS_DIRS = {
    ClassLabel.NORMAL: ("normal",),
    ClassLabel.BENIGN: ("benign",),
    ClassLabel.IN_SITU: ("in_situ", "insitu", "in situ"),
    ClassLabel.INVASIVE: ("invasive",),
}


def subseed(root: int, *labels) -> int:
    """Stable 63-bit seed derived from the root seed and a label path."""
    digest = hashlib.sha256(repr((int(root),) + tuple(str(v) for v in labels)).encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def read_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except (OSError, UnidentifiedImageError) as exc:
        raise HistofuseError(f"cannot read image {path}: {exc}") from None


def write_image(path, image: np.ndarray) -> None:
    """Lossless write; format follows the suffix (TIFF by default)."""
    path = Path(path)
    fmt = "PNG" if path.suffix.lower() == ".png" else "TIFF"
    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="RGB").save(path, format=fmt)


@dataclass(frozen=True)
class Slide:
    slide_id: str
    path: str
    label: ClassLabel
    split: str = "train"


@dataclass
class DatasetManifest:
    slides: list[Slide] = field(default_factory=list)

    def by_split(self, *splits: str) -> list[Slide]:
        return [s for s in self.slides if s.split in splits]

    def truth(self) -> dict[str, ClassLabel]:
        return {s.slide_id: s.label for s in self.slides}

    def get(self, slide_id: str) -> Slide:
        for s in self.slides:
            if s.slide_id == slide_id:
                return s
        raise KeyError(slide_id)

    def save(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["slide", "path", "label", "split"])
            for s in self.slides:
                writer.writerow([s.slide_id, s.path, s.label.slug, s.split])

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        slides = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            if next(reader, None) != ["slide", "path", "label", "split"]:
                raise ParseError("expected header slide,path,label,split", 1, path)
            for lineno, row in enumerate(reader, 2):
                if not row:
                    continue
                try:
                    slide, p, label, split = row
                    slides.append(Slide(slide, p, ClassLabel.parse(label), split))
                except ValueError as exc:
                    raise ParseError(str(exc), lineno, path) from None
                if split not in SPLITS:
                    raise ParseError(f"unknown split {split!r}", lineno, path)
        return cls(slides)


def split_counts(n: int, fractions=DEFAULT_FRACTIONS) -> tuple[int, int, int]:
    """Floor each fraction; whatever is left over goes to train."""
    if abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise InvalidArgumentError(f"split fractions must be >= 0 and sum to 1, got {fractions}")
    counts = [int(np.floor(n * f + 1e-9)) for f in fractions]
    counts[0] += n - sum(counts)
    return tuple(counts)


def _find_class_dir(root: Path, label: ClassLabel) -> Path:
    entries = {p.name.lower(): p for p in root.iterdir() if p.is_dir()}
    for name in CLASS_DIRS[label]:
        if name in entries:
            return entries[name]
    raise HistofuseError(f"{root}: missing class directory for {label.slug}")


def ingest_dataset(root, seed: int = 0, fractions=DEFAULT_FRACTIONS, check_images: bool = True) -> DatasetManifest:
    """Scan ``root/<class>/`` and assign a class-stratified train/val/test split."""
    root = Path(root)
    if not root.is_dir():
        raise HistofuseError(f"dataset root {root} is not a directory")
    slides = []
    for label in ClassLabel:
        class_dir = _find_class_dir(root, label)
        files = sorted(p for p in class_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if check_images:
            for p in files:
                try:
                    with Image.open(p) as im:
                        im.verify()
                except (OSError, UnidentifiedImageError) as exc:
                    raise HistofuseError(f"unreadable image {p}: {exc}") from None
        rng = np.random.default_rng(subseed(seed, "split", label.slug))
        order = rng.permutation(len(files))
        n_train, n_val, _ = split_counts(len(files), fractions)
        for rank, i in enumerate(order):
            split = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
            slides.append(Slide(files[i].stem, str(files[i]), label, split))
    ids = [s.slide_id for s in slides]
    if len(set(ids)) != len(ids):
        raise HistofuseError("slide ids (file stems) must be unique across classes")
    slides.sort(key=lambda s: (int(s.label), s.slide_id))
    return DatasetManifest(slides)


@dataclass(frozen=True)
class ClassStyle:
    """Appearance of one synthetic class in concentration space."""

    nuclei_fraction: float
    nuclei_sigma: float
    lumen_fraction: float
    nuclei_h: float


CLASS_STYLES = {
    ClassLabel.NORMAL: ClassStyle(0.06, 2.0, 0.40, 1.0),
    ClassLabel.BENIGN: ClassStyle(0.16, 2.5, 0.25, 1.0),
    ClassLabel.IN_SITU: ClassStyle(0.30, 3.0, 0.12, 1.1),
    ClassLabel.INVASIVE: ClassStyle(0.45, 3.5, 0.04, 1.2),
}


@dataclass(frozen=True)
class CorpusSpec:
    per_class: int = 10
    width: int = 1024
    height: int = 768
    stain_jitter: float = 0.04
    intensity_jitter: float = 0.15
    styles: dict = field(default_factory=lambda: dict(CLASS_STYLES))


def _field(rng, shape, sigma):
    f = gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    return (f - f.mean()) / (f.std() + 1e-12)


def _mask(rng, shape, sigma, fraction):
    f = _field(rng, shape, sigma)
    return f > np.quantile(f, 1.0 - fraction)


def perturbed_stains(rng, jitter: float) -> StainMatrix:
    W = REFERENCE_STAINS.matrix + rng.normal(0.0, jitter, (3, 2))
    W = np.maximum(W, 0.02)
    W = W / np.linalg.norm(W, axis=0)
    if W[0, 0] < W[0, 1]:
        W = W[:, ::-1]
    return StainMatrix(W)


def synthesize_image(label: ClassLabel, seed: int, spec: CorpusSpec = CorpusSpec()) -> np.ndarray:
    """Two-stain image whose nuclei density, size and lumen area depend on the class."""
    style = spec.styles[ClassLabel.parse(label)]
    rng = np.random.default_rng(seed)
    shape = (spec.height, spec.width)
    lumen = _mask(rng, shape, 24.0, style.lumen_fraction)
    nuclei = _mask(rng, shape, style.nuclei_sigma, style.nuclei_fraction) & ~lumen
    texture = _field(rng, shape, 6.0)
    h = 0.08 + 0.03 * np.abs(texture)
    e = 0.55 + 0.12 * texture
    h = np.where(nuclei, style.nuclei_h * (1.0 + 0.1 * texture), h)
    e = np.where(nuclei, 0.06, e)
    h = np.where(lumen, 0.0, h)
    e = np.where(lumen, 0.0, e)
    scale = 1.0 + rng.uniform(-spec.intensity_jitter, spec.intensity_jitter, 2)
    conc = np.clip(np.stack([h, e], axis=-1) * scale, 0.0, None)
    return render(conc, perturbed_stains(rng, spec.stain_jitter))


def slide_name(label: ClassLabel, index: int) -> str:
    return f"{FILE_PREFIX[label]}{index:03d}"


def generate_synthetic_corpus(out_dir, spec: CorpusSpec = CorpusSpec(), seed: int = 0) -> list[Slide]:
    """Write ``out_dir/<class>/<id>.tif`` plus ``truth.csv``; deterministic given ``seed``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise HistofuseError(f"cannot create {out}: {exc}") from None
    slides = []
    for label in ClassLabel:
        class_dir = out / label.slug
        class_dir.mkdir(exist_ok=True)
        for i in range(1, spec.per_class + 1):
            sid = slide_name(label, i)
            path = class_dir / f"{sid}.tif"
            write_image(path, synthesize_image(label, subseed(seed, "corpus", sid), spec))
            slides.append(Slide(sid, str(path), label))
    with open(out / "truth.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["slide", "label"])
        for s in slides:
            writer.writerow([s.slide_id, s.label.slug])
    return slides
