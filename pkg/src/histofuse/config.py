"""Pipeline configuration: one INI section per module.

Defaults are the published values where they exist (patch size 512,
stride 256, 500 patches per slide, jitter deltas, GBM 280/4/0.9, 70/20/10
split); the rest are conventional choices exposed for tuning.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from typing import get_type_hints

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class StainConfig:
    od_threshold: float = 0.15
    angle_percentile: float = 1.0
    sparsity: float = 0.1
    max_outer_iters: int = 50
    tol: float = 1e-4
    max_pixels: int = 20000


@dataclass(frozen=True)
class PatchConfig:
    size: int = 512
    stride: int = 256
    patches_per_slide: int = 500
    brightness_delta: float = 5 / 255
    contrast_delta: float = 0.05
    saturation_delta: float = 0.05
    hue_delta: float = 0.02


@dataclass(frozen=True)
class BaselineConfig:
    l1: float = 0.01
    epochs: int = 500
    step: float = 1.0


@dataclass(frozen=True)
class FusionConfig:
    l1: float = 0.01
    lr_epochs: int = 500
    num_estimators: int = 280
    max_depth: int = 4
    learning_rate: float = 0.9


@dataclass(frozen=True)
class RefinementConfig:
    gbm_estimators: int = 280
    gbm_depth: int = 4
    gbm_learning_rate: float = 0.9
    svm_C: float = 1.0
    svm_epochs: int = 50
    lr_l1: float = 0.01
    lr_epochs: int = 500


@dataclass(frozen=True)
class DataConfig:
    train_fraction: float = 0.7
    val_fraction: float = 0.2
    test_fraction: float = 0.1

    @property
    def fractions(self) -> tuple[float, float, float]:
        return (self.train_fraction, self.val_fraction, self.test_fraction)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    methods: tuple[str, ...] = ("macenko", "vahadane")
    target: str = "iv001"
    classifier: str = "baseline"
    fusion_splits: tuple[str, ...] = ("train", "val")
    refinement_splits: tuple[str, ...] = ("train", "val")
    eval_splits: tuple[str, ...] = ("test",)


@dataclass(frozen=True)
class PipelineConfig:
    run: RunConfig = field(default_factory=RunConfig)
    stain: StainConfig = field(default_factory=StainConfig)
    patching: PatchConfig = field(default_factory=PatchConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    refinement: RefinementConfig = field(default_factory=RefinementConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def with_seed(self, seed: int) -> "PipelineConfig":
        return replace(self, run=replace(self.run, seed=int(seed)))

    def to_ini(self) -> str:
        lines = []
        for section in fields(self):
            lines.append(f"[{section.name}]")
            obj = getattr(self, section.name)
            for f in fields(obj):
                value = getattr(obj, f.name)
                if isinstance(value, tuple):
                    value = ", ".join(value)
                elif isinstance(value, float):
                    value = repr(value)
                lines.append(f"{f.name} = {value}")
            lines.append("")
        return "\n".join(lines)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_ini())


def _coerce(raw: str, typ, key: str):
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is str:
            return raw.strip()
        if typ == tuple[str, ...]:
            return tuple(s.strip() for s in raw.split(",") if s.strip())
    except ValueError:
        raise InvalidArgumentError(f"config key {key}: cannot parse {raw!r}") from None
    raise InvalidArgumentError(f"config key {key}: unsupported type {typ}")  # pragma: no cover


def parse_config(text: str) -> PipelineConfig:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    parser.read_string(text)
    sections = {}
    hints = get_type_hints(PipelineConfig)
    known = {f.name for f in fields(PipelineConfig)}
    for name in parser.sections():
        if name not in known:
            raise InvalidArgumentError(f"unknown config section [{name}]")
    for f in fields(PipelineConfig):
        cls = hints[f.name]
        default = cls()
        if not parser.has_section(f.name):
            sections[f.name] = default
            continue
        sub_hints = get_type_hints(cls)
        valid = {sf.name for sf in fields(cls)}
        updates = {}
        for key, raw in parser.items(f.name):
            if key not in valid:
                raise InvalidArgumentError(f"unknown config key [{f.name}] {key}")
            updates[key] = _coerce(raw, sub_hints[key], f"[{f.name}] {key}")
        sections[f.name] = replace(default, **updates)
    cfg = PipelineConfig(**sections)
    for m in cfg.run.methods:
        if m not in ("macenko", "vahadane"):
            raise InvalidArgumentError(f"unknown normalisation method {m!r}")
    return cfg


def load_config(path) -> PipelineConfig:
    with open(path) as fh:
        return parse_config(fh.read())
