"""Precision/recall/F1 scoring and strategy-comparison reports.

The positive class is the anomaly: tp counts abnormal verdicts on anomalous
entries. Log datasets are heavily normal-skewed, so this choice changes every
number and is stated once, here. Classification errors are excluded from the
matrix and surfaced as ``skipped``, never silently coerced into a class.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .ingest import GroundTruth
from .ragqa import Verdict, VerdictLabel

PRECISION_UNDEFINED = "precision_undefined"
RECALL_UNDEFINED = "recall_undefined"
F1_UNDEFINED = "f1_undefined"


@dataclass
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0
    skipped: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn + self.skipped

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(
            tp=self.tp + other.tp,
            fp=self.fp + other.fp,
            fn=self.fn + other.fn,
            tn=self.tn + other.tn,
            skipped=self.skipped + other.skipped,
        )

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn, "skipped": self.skipped}


@dataclass
class MetricsReport:
    precision: float
    recall: float
    f1: float
    matrix: ConfusionMatrix
    degenerate_flags: set[str] = field(default_factory=set)
    config_digest: str = ""

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "matrix": self.matrix.to_dict(),
            "degenerate_flags": sorted(self.degenerate_flags),
            "config_digest": self.config_digest,
        }


def accumulate(
    predictions: Sequence[Verdict | BaseException],
    labels: Sequence[GroundTruth],
) -> ConfusionMatrix:
    """Tally verdicts against ground truth; exceptions count as skipped."""
    if len(predictions) != len(labels):
        raise ValueError(f"{len(predictions)} predictions vs {len(labels)} labels")
    m = ConfusionMatrix()
    for pred, truth in zip(predictions, labels):
        if isinstance(pred, BaseException):
            m.skipped += 1
        elif pred.value is VerdictLabel.ABNORMAL:
            if truth is GroundTruth.ANOMALOUS:
                m.tp += 1
            else:
                m.fp += 1
        else:
            if truth is GroundTruth.ANOMALOUS:
                m.fn += 1
            else:
                m.tn += 1
    return m


def f1_from_precision_recall(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall; 0 when both are 0."""
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def metrics(matrix: ConfusionMatrix, config_digest: str = "") -> MetricsReport:
    """Compute precision, recall, and F1 from the matrix.

    Zero denominators yield 0 with the matching degenerate flag set, so
    reports stay serializable and comparisons stay total.
    """
    flags: set[str] = set()
    if matrix.tp + matrix.fp == 0:
        precision = 0.0
        flags.add(PRECISION_UNDEFINED)
    else:
        precision = matrix.tp / (matrix.tp + matrix.fp)
    if matrix.tp + matrix.fn == 0:
        recall = 0.0
        flags.add(RECALL_UNDEFINED)
    else:
        recall = matrix.tp / (matrix.tp + matrix.fn)
    if precision + recall == 0.0:
        f1 = 0.0
        flags.add(F1_UNDEFINED)
    else:
        f1 = f1_from_precision_recall(precision, recall)
    return MetricsReport(
        precision=precision,
        recall=recall,
        f1=f1,
        matrix=matrix,
        degenerate_flags=flags,
        config_digest=config_digest,
    )


@dataclass(frozen=True)
class ComparisonRow:
    dataset: str
    strategy: str
    report: MetricsReport


@dataclass
class StrategyComparison:
    """Per-(dataset, strategy) metrics table, serializable as CSV and JSON."""

    rows: list[ComparisonRow]

    def to_csv(self) -> str:
        # Human-readable CSV rounds metrics half-even to 2 decimals; the JSON
        # document keeps full precision.
        lines = ["dataset,strategy,precision,recall,f1,tp,fp,fn,tn,skipped"]
        for row in self.rows:
            r, m = row.report, row.report.matrix
            lines.append(
                f"{row.dataset},{row.strategy},{r.precision:.2f},{r.recall:.2f},{r.f1:.2f},"
                f"{m.tp},{m.fp},{m.fn},{m.tn},{m.skipped}"
            )
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "rows": [
                {"dataset": row.dataset, "strategy": row.strategy, "report": row.report.to_dict()}
                for row in self.rows
            ]
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def compare_strategies(rows: list[ComparisonRow]) -> StrategyComparison:
    if not rows:
        raise ValueError("comparison needs at least one row")
    return StrategyComparison(rows=list(rows))


def write_comparison(comparison: StrategyComparison, csv_path: str | Path, json_path: str | Path) -> None:
    Path(csv_path).write_text(comparison.to_csv(), encoding="utf-8")
    Path(json_path).write_text(comparison.to_json(), encoding="utf-8")
