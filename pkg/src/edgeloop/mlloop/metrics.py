"""Classification metrics and per-value deviation analysis."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from ..errors import LengthMismatch


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class MetricsReport:
    """Five standard metrics; a field is None when its denominator is zero."""

    sensitivity: Optional[float]
    specificity: Optional[float]
    precision: Optional[float]
    accuracy: Optional[float]
    mcc: Optional[float]

    def undefined_fields(self) -> list[str]:
        return [name for name in ("sensitivity", "specificity", "precision",
                                  "accuracy", "mcc")
                if getattr(self, name) is None]


def _ratio(numerator: float, denominator: float) -> Optional[float]:
    if denominator == 0:
        return None
    return numerator / denominator


def classification_metrics(cm: ConfusionMatrix) -> MetricsReport:
    mcc_denominator = math.sqrt(
        float(cm.tp + cm.fp) * float(cm.tp + cm.fn)
        * float(cm.tn + cm.fp) * float(cm.tn + cm.fn))
    return MetricsReport(
        sensitivity=_ratio(cm.tp, cm.tp + cm.fn),
        specificity=_ratio(cm.tn, cm.tn + cm.fp),
        precision=_ratio(cm.tp, cm.tp + cm.fp),
        accuracy=_ratio(cm.tp + cm.tn, cm.total),
        mcc=None if mcc_denominator == 0
        else (float(cm.tp) * cm.tn - float(cm.fp) * cm.fn) / mcc_denominator,
    )


@dataclass(frozen=True)
class DeviationReport:
    total_values: int
    equal_values: int
    different_values: int
    max_difference: float
    mean_difference: float


def deviation_report(outputs_a: Sequence[float], outputs_b: Sequence[float]) -> DeviationReport:
    """Value-by-value comparison of two deployments' raw outputs.

    Equality is exact; max and mean are over |a - b| for all compared
    values. The mean accumulates in input order so independently written
    decoders of the report can reproduce it bit-for-bit.
    """
    if len(outputs_a) != len(outputs_b):
        raise LengthMismatch(f"{len(outputs_a)} vs {len(outputs_b)} values")
    equal = 0
    max_difference = 0.0
    total_difference = 0.0
    for a, b in zip(outputs_a, outputs_b):
        if a == b:
            equal += 1
        difference = abs(a - b)
        if difference > max_difference:
            max_difference = difference
        total_difference += difference
    total = len(outputs_a)
    return DeviationReport(
        total_values=total,
        equal_values=equal,
        different_values=total - equal,
        max_difference=max_difference,
        mean_difference=total_difference / total if total else 0.0,
    )
