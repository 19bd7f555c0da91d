"""Image-level accuracy, contingency table and per-class sensitivity."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError
from .labels import N_CLASSES, ClassLabel

# Row/column order of the printed table, most severe first.
DISPLAY_ORDER = (ClassLabel.INVASIVE, ClassLabel.IN_SITU, ClassLabel.BENIGN, ClassLabel.NORMAL)
DISPLAY_NAMES = {
    ClassLabel.INVASIVE: "invasive",
    ClassLabel.IN_SITU: "in situ",
    ClassLabel.BENIGN: "benign",
    ClassLabel.NORMAL: "normal",
}


@dataclass(frozen=True)
class EvaluationReport:
    accuracy: float
    table: np.ndarray  # [truth, prediction], ClassLabel index order
    sensitivity: np.ndarray  # ClassLabel index order

    @property
    def total(self) -> int:
        return int(self.table.sum())

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "n_images": self.total,
            "classes": [c.slug for c in ClassLabel],
            "contingency": self.table.tolist(),
            "sensitivity": {c.slug: float(self.sensitivity[int(c)]) for c in ClassLabel},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def to_text(self) -> str:
        width = 10
        corner = "truth \\ pred"
        head = f"{corner:<{width + 2}}" + "".join(
            f"{DISPLAY_NAMES[c]:>{width}}" for c in DISPLAY_ORDER
        ) + f"{'sensitivity':>{width + 3}}"
        lines = [f"Image-wise accuracy: {self.accuracy:.4f} ({np.trace(self.table)}/{self.total})", "", head]
        for t in DISPLAY_ORDER:
            row = f"{DISPLAY_NAMES[t]:<{width + 2}}" + "".join(
                f"{int(self.table[int(t), int(p)]):>{width}d}" for p in DISPLAY_ORDER
            )
            row += f"{self.sensitivity[int(t)]:>{width + 3}.2f}"
            lines.append(row)
        return "\n".join(lines) + "\n"


def contingency(predictions: Sequence, truth: Sequence) -> np.ndarray:
    if len(predictions) != len(truth):
        raise InvalidArgumentError(
            f"{len(predictions)} predictions for {len(truth)} ground-truth labels"
        )
    table = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    for p, t in zip(predictions, truth):
        table[int(ClassLabel.parse(t)), int(ClassLabel.parse(p))] += 1
    return table


def report_from_table(table) -> EvaluationReport:
    table = np.asarray(table, dtype=np.int64)
    total = table.sum()
    accuracy = float(np.trace(table) / total) if total else 0.0
    rows = table.sum(axis=1)
    # A class absent from the ground truth gets sensitivity 0.
    sens = np.divide(np.diag(table), rows, out=np.zeros(N_CLASSES), where=rows > 0)
    return EvaluationReport(accuracy, table, sens)


def evaluate(predictions: Sequence, truth: Sequence) -> EvaluationReport:
    return report_from_table(contingency(predictions, truth))
