"""Metrics, cross-validation orchestration, coverage analysis, and rater
agreement. Everything here is a pure function over prediction records."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .corpus import Document, FoldPlan
from .errors import DiscernError, InvalidProbability, ShapeMismatch


@dataclass(frozen=True)
class PredictionRecord:
    """One row of a prediction dump."""

    doc_id: str
    criterion: str
    label_true: int
    label_pred: int
    confidence: float


@dataclass
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class CoverageRow:
    coverage: float
    threshold: float
    precision: float | None
    recall: float | None
    accuracy: float | None
    n_covered: int
    n_abstained: int


@dataclass
class CoverageReport:
    criterion: str
    rows: list[CoverageRow]


@dataclass
class CVReport:
    criterion: str
    model_label: str
    per_fold: list[dict[str, float]]
    mean: dict[str, float]
    std: dict[str, float]


METRIC_KEYS = ("precision", "recall", "accuracy", "f1_macro")


def confusion(pairs: Sequence[tuple[int, int]]) -> ConfusionCounts:
    """Counts from (predicted, true) pairs; class 1 is positive."""
    tp = fp = tn = fn = 0
    for pred, true in pairs:
        if pred == 1 and true == 1:
            tp += 1
        elif pred == 1 and true == 0:
            fp += 1
        elif pred == 0 and true == 0:
            tn += 1
        else:
            fn += 1
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def _safe_div(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def metrics(pairs: Sequence[tuple[int, int]]) -> dict[str, float]:
    """Precision/recall for the positive class, accuracy, and F1-macro.

    Zero-denominator conventions are fixed at 0/0 -> 0, so a class absent
    from both predictions and truth contributes F1 = 0 to the macro mean.
    """
    if not pairs:
        raise DiscernError("metrics needs at least one (predicted, true) pair")
    c = confusion(pairs)
    per_class_f1 = []
    for tp_c, fp_c, fn_c in ((c.tn, c.fn, c.fp), (c.tp, c.fp, c.fn)):
        p = _safe_div(tp_c, tp_c + fp_c)
        r = _safe_div(tp_c, tp_c + fn_c)
        per_class_f1.append(_safe_div(2 * p * r, p + r))
    return {
        "precision": _safe_div(c.tp, c.tp + c.fp),
        "recall": _safe_div(c.tp, c.tp + c.fn),
        "accuracy": (c.tp + c.tn) / c.total,
        "f1_macro": sum(per_class_f1) / 2.0,
    }


def percent_agreement(rater_labels: Sequence[int], reference_labels: Sequence[int]) -> float:
    """Share of positions where both label lists agree."""
    if len(rater_labels) != len(reference_labels):
        raise ShapeMismatch(
            f"label lists differ in length: {len(rater_labels)} vs {len(reference_labels)}"
        )
    if not rater_labels:
        raise DiscernError("percent_agreement needs at least one label")
    agree = sum(1 for a, b in zip(rater_labels, reference_labels) if a == b)
    return agree / len(rater_labels)


# ---------------------------------------------------------------------------
# coverage / abstention


def coverage_threshold(confidences: Sequence[float], coverage: float) -> float:
    """Confidence cutoff retaining at least a `coverage` share of predictions.

    Nearest-rank quantile: the floor((1-coverage)*n) lowest confidences are
    abstained and the next order statistic becomes the threshold. Full
    coverage reports the binary-argmax confidence floor of 0.5 so that
    `confidence >= threshold` trivially retains everything.
    """
    if not 0.0 <= coverage <= 1.0:
        raise InvalidProbability(f"coverage must be in [0, 1], got {coverage}")
    n = len(confidences)
    if n == 0:
        raise DiscernError("no confidences to threshold")
    n_abstain = int(math.floor((1.0 - coverage) * n + 1e-9))
    if n_abstain <= 0:
        return 0.5
    ordered = sorted(confidences)
    if n_abstain >= n:
        return math.inf
    return ordered[n_abstain]


def coverage_analysis(
    records: Sequence[PredictionRecord], coverage_levels: Sequence[float]
) -> CoverageReport:
    """Metrics on the retained predictions at each coverage level.

    Predictions with confidence >= threshold are retained; an empty retained
    set yields a row with undefined metrics rather than an error.
    """
    if not records:
        raise DiscernError("coverage analysis needs at least one prediction")
    for r in records:
        if not 0.5 <= r.confidence <= 1.0:
            raise InvalidProbability(
                f"{r.doc_id}: confidence {r.confidence} outside [0.5, 1]"
            )
    criterion = records[0].criterion
    confidences = [r.confidence for r in records]
    rows = []
    for coverage in coverage_levels:
        threshold = coverage_threshold(confidences, coverage)
        retained = [r for r in records if r.confidence >= threshold]
        if retained:
            m = metrics([(r.label_pred, r.label_true) for r in retained])
            row = CoverageRow(
                coverage=coverage,
                threshold=threshold,
                precision=m["precision"],
                recall=m["recall"],
                accuracy=m["accuracy"],
                n_covered=len(retained),
                n_abstained=len(records) - len(retained),
            )
        else:
            row = CoverageRow(
                coverage=coverage,
                threshold=threshold,
                precision=None,
                recall=None,
                accuracy=None,
                n_covered=0,
                n_abstained=len(records),
            )
        rows.append(row)
    by_coverage = sorted(rows, key=lambda r: r.coverage)
    for lo, hi in zip(by_coverage, by_coverage[1:]):
        if hi.threshold > lo.threshold:
            raise DiscernError("coverage thresholds must be non-increasing in coverage")
    return CoverageReport(criterion=criterion, rows=rows)


# ---------------------------------------------------------------------------
# cross-validation

FoldTrainer = Callable[[int, list[Document], list[Document]], list[PredictionRecord]]


def cross_validate(
    documents: Sequence[Document], plan: FoldPlan, trainer: FoldTrainer, model_label: str
) -> tuple[CVReport, list[PredictionRecord]]:
    """Train and test on every fold of the plan; aggregate mean and sample
    standard deviation of the test metrics."""
    by_id = {d.id: d for d in documents}
    per_fold = []
    all_records: list[PredictionRecord] = []
    for fold_index, (train_ids, test_ids) in enumerate(plan.folds):
        train_docs = [by_id[i] for i in train_ids]
        test_docs = [by_id[i] for i in test_ids]
        records = trainer(fold_index, train_docs, test_docs)
        got = {r.doc_id for r in records}
        if got != set(test_ids):
            raise DiscernError(
                f"fold {fold_index}: trainer returned predictions for {len(got)} "
                f"documents, expected the {len(test_ids)} test documents"
            )
        fold_metrics = metrics([(r.label_pred, r.label_true) for r in records])
        fold_metrics["n_test"] = float(len(test_ids))
        per_fold.append(fold_metrics)
        all_records.extend(records)
    mean = {k: float(np.mean([f[k] for f in per_fold])) for k in METRIC_KEYS}
    std = {
        k: float(np.std([f[k] for f in per_fold], ddof=1)) if len(per_fold) > 1 else 0.0
        for k in METRIC_KEYS
    }
    report = CVReport(
        criterion=plan.criterion,
        model_label=model_label,
        per_fold=per_fold,
        mean=mean,
        std=std,
    )
    return report, all_records


# ---------------------------------------------------------------------------
# prediction dump I/O

DUMP_HEADER = ("doc_id", "criterion", "label_true", "label_pred", "confidence")


def write_prediction_dump(path: str | Path, records: Sequence[PredictionRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(DUMP_HEADER)
        for r in records:
            writer.writerow(
                [r.doc_id, r.criterion, r.label_true, r.label_pred, repr(r.confidence)]
            )


def read_prediction_dump(path: str | Path) -> list[PredictionRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != DUMP_HEADER:
            raise DiscernError(f"{path}: expected header {','.join(DUMP_HEADER)}")
        for row in reader:
            if len(row) != len(DUMP_HEADER):
                raise DiscernError(f"{path}: malformed row {row!r}")
            records.append(
                PredictionRecord(
                    doc_id=row[0],
                    criterion=row[1],
                    label_true=int(row[2]),
                    label_pred=int(row[3]),
                    confidence=float(row[4]),
                )
            )
    if not records:
        raise DiscernError(f"{path}: empty prediction dump")
    return records
