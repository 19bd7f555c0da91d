"""Stain-normalised, heatmap-fused breast histology image classification."""
from .errors import (
    DegenerateStainError,
    DegenerateTrainingError,
    HistofuseError,
    InvalidArgumentError,
    MissingProbabilityError,
    ModelFormatError,
    NoTissueError,
    ParseError,
)
from .labels import ClassLabel

__version__ = "0.1.0"

__all__ = [
    "ClassLabel",
    "DegenerateStainError",
    "DegenerateTrainingError",
    "HistofuseError",
    "InvalidArgumentError",
    "MissingProbabilityError",
    "ModelFormatError",
    "NoTissueError",
    "ParseError",
]
