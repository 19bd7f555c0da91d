"""Class labels and the severity ordering used for tie-breaking."""
from __future__ import annotations

from enum import IntEnum

import numpy as np


class ClassLabel(IntEnum):
    NORMAL = 0
    BENIGN = 1
    IN_SITU = 2
    INVASIVE = 3

    @classmethod
    def parse(cls, value) -> "ClassLabel":
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        key = str(value).strip().lower().replace(" ", "_").replace("-", "_")
        try:
            return _ALIASES[key]
        except KeyError:
            raise ValueError(f"unknown class label {value!r}") from None

    @property
    def slug(self) -> str:
        return self.name.lower()


N_CLASSES = 4

_ALIASES = {
    "normal": ClassLabel.NORMAL,
    "n": ClassLabel.NORMAL,
    "benign": ClassLabel.BENIGN,
    "b": ClassLabel.BENIGN,
    "in_situ": ClassLabel.IN_SITU,
    "insitu": ClassLabel.IN_SITU,
    "is": ClassLabel.IN_SITU,
    "invasive": ClassLabel.INVASIVE,
    "iv": ClassLabel.INVASIVE,
}

# File-name prefixes for each class, following the public challenge naming.
FILE_PREFIX = {
    ClassLabel.NORMAL: "n",
    ClassLabel.BENIGN: "b",
    ClassLabel.IN_SITU: "is",
    ClassLabel.INVASIVE: "iv",
}


def severity_argmax(values) -> int:
    """Index of the largest value; exact ties go to the more severe class.

    Severity follows the label index (invasive > in situ > benign > normal),
    so the highest index among the maxima wins.
    """
    values = np.asarray(values)
    n = values.shape[-1]
    return n - 1 - int(np.argmax(values[..., ::-1], axis=-1))


def severity_argmax_grid(values: np.ndarray, axis: int = 0) -> np.ndarray:
    """Vectorised `severity_argmax` along ``axis``."""
    values = np.moveaxis(np.asarray(values), axis, -1)
    n = values.shape[-1]
    return (n - 1 - np.argmax(values[..., ::-1], axis=-1)).astype(np.int64)


def plurality(labels, n_classes: int = N_CLASSES) -> int:
    """Most frequent label with severity tie-break."""
    counts = np.bincount(np.asarray(labels, dtype=np.int64).ravel(), minlength=n_classes)
    return severity_argmax(counts)
