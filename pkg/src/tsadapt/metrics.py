"""Macro-F1 scoring with the 0/0 := 0 convention for absent classes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, LabelRangeError


@dataclass
class MacroF1Report:
    """Per-class precision/recall/F1 plus the unweighted macro average.

    When a report aggregates several seeds, per_seed holds the individual
    macro-F1 values and mean/std summarize them (population std).
    """

    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    macro_f1: float
    per_seed: list | None = None
    mean: float | None = None
    std: float | None = None

    def to_dict(self) -> dict:
        return {
            "precision": [float(v) for v in self.precision],
            "recall": [float(v) for v in self.recall],
            "f1": [float(v) for v in self.f1],
            "macro_f1": float(self.macro_f1),
            "per_seed": None if self.per_seed is None else [float(v) for v in self.per_seed],
            "mean": None if self.mean is None else float(self.mean),
            "std": None if self.std is None else float(self.std),
        }


def macro_f1(predictions, truth, n_classes: int) -> MacroF1Report:
    """Score integer predictions against truth over all n_classes classes.

    A class absent from both predictions and truth scores 0, and the macro
    average runs over every declared class regardless.
    """
    predictions = np.asarray(predictions)
    truth = np.asarray(truth)
    if predictions.shape != truth.shape or predictions.ndim != 1:
        raise ContractError(
            f"prediction/truth shapes {predictions.shape} / {truth.shape} differ"
        )
    for name, arr in (("predictions", predictions), ("truth", truth)):
        if len(arr) and (arr.min() < 0 or arr.max() >= n_classes):
            raise LabelRangeError(f"{name} contain labels outside 0..{n_classes - 1}")

    precision = np.zeros(n_classes)
    recall = np.zeros(n_classes)
    f1 = np.zeros(n_classes)
    for c in range(n_classes):
        tp = np.sum((predictions == c) & (truth == c))
        fp = np.sum((predictions == c) & (truth != c))
        fn = np.sum((predictions != c) & (truth == c))
        precision[c] = tp / (tp + fp) if tp + fp else 0.0
        recall[c] = tp / (tp + fn) if tp + fn else 0.0
        denom = precision[c] + recall[c]
        f1[c] = 2.0 * precision[c] * recall[c] / denom if denom else 0.0
    return MacroF1Report(precision, recall, f1, float(f1.mean()))


def aggregate_reports(reports: list) -> MacroF1Report:
    """Summarize per-seed reports: per-class means plus macro mean and std."""
    if not reports:
        raise ContractError("nothing to aggregate")
    per_seed = [r.macro_f1 for r in reports]
    return MacroF1Report(
        precision=np.mean([r.precision for r in reports], axis=0),
        recall=np.mean([r.recall for r in reports], axis=0),
        f1=np.mean([r.f1 for r in reports], axis=0),
        macro_f1=float(np.mean(per_seed)),
        per_seed=per_seed,
        mean=float(np.mean(per_seed)),
        std=float(np.std(per_seed)),
    )
