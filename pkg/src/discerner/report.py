"""Render evaluation results: aligned text tables next to the delimited
dumps, and matplotlib figures saved to files."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluation import CoverageReport, CVReport

# Fixed Software chunk so PNG bytes stay identical across repeated runs.
_PNG_METADATA = {"Software": "discerner"}


def format_mean_std(mean: float, std: float) -> str:
    """e.g. 0.82 ( 6): mean to two decimals, std in hundredths."""
    return f"{mean:.2f} ({int(round(std * 100)):2d})"


def format_cv_table(reports: Sequence[CVReport]) -> str:
    """One row per (model, criterion): F1-macro as mean (std), then accuracy."""
    lines = [f"{'Model':<18} {'Question':<9} {'F1-macro':>10} {'Accuracy':>10}"]
    for r in reports:
        lines.append(
            f"{r.model_label:<18} {r.criterion.upper():<9} "
            f"{format_mean_std(r.mean['f1_macro'], r.std['f1_macro']):>10} "
            f"{format_mean_std(r.mean['accuracy'], r.std['accuracy']):>10}"
        )
    return "\n".join(lines) + "\n"


def format_coverage_table(report: CoverageReport) -> str:
    """Coverage, threshold, precision, recall, accuracy; undefined rows
    render as dashes instead of crashing."""
    lines = [
        f"{'Question':<9} {'Coverage':>9} {'Threshold':>10} "
        f"{'Precision':>10} {'Recall':>7} {'Accuracy':>9}"
    ]
    for row in report.rows:
        if row.accuracy is None:
            precision = recall = accuracy = "--"
        else:
            precision = f"{row.precision:.2f}"
            recall = f"{row.recall:.2f}"
            accuracy = f"{row.accuracy:.0%}"
        threshold = "inf" if row.threshold == float("inf") else f"{row.threshold:.2f}"
        lines.append(
            f"{report.criterion.upper():<9} {row.coverage:>8.0%} {threshold:>10} "
            f"{precision:>10} {recall:>7} {accuracy:>9}"
        )
    return "\n".join(lines) + "\n"


def format_agreement_table(rows: Sequence[tuple[str, float]]) -> str:
    """Per-criterion percent agreement plus the average."""
    lines = [f"{'Question':<9} {'Agreement':>10}"]
    for criterion, value in rows:
        lines.append(f"{criterion.upper():<9} {value:>9.0%}")
    if rows:
        avg = sum(v for _, v in rows) / len(rows)
        lines.append(f"{'average':<9} {avg:>9.0%}")
    return "\n".join(lines) + "\n"


def save_cv_figure(reports: Sequence[CVReport], path: str | Path) -> None:
    """Per-fold F1-macro scatter, one column of points per criterion and a
    marker per model."""
    fig, ax = plt.subplots(figsize=(7, 4))
    criteria = sorted({r.criterion for r in reports})
    models = sorted({r.model_label for r in reports})
    markers = ["o", "s", "^", "D", "v", "P"]
    offsets = {m: (i - (len(models) - 1) / 2) * 0.12 for i, m in enumerate(models)}
    for r in reports:
        xbase = criteria.index(r.criterion) + offsets[r.model_label]
        ys = [fold["f1_macro"] for fold in r.per_fold]
        ax.scatter(
            [xbase] * len(ys),
            ys,
            marker=markers[models.index(r.model_label) % len(markers)],
            label=r.model_label,
            alpha=0.75,
        )
    handles, labels = ax.get_legend_handles_labels()
    seen: dict[str, object] = {}
    for h, l in zip(handles, labels):
        seen.setdefault(l, h)
    ax.legend(seen.values(), seen.keys(), fontsize=8)
    ax.set_xticks(range(len(criteria)))
    ax.set_xticklabels([c.upper() for c in criteria])
    ax.set_ylabel("F1-macro per fold")
    ax.set_ylim(0.0, 1.05)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_METADATA)
    plt.close(fig)


def save_coverage_figure(report: CoverageReport, path: str | Path) -> None:
    """Accuracy and confidence threshold against coverage."""
    rows = sorted(report.rows, key=lambda r: r.coverage)
    coverages = [r.coverage for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    accuracies = [r.accuracy for r in rows]
    ax.plot(coverages, accuracies, marker="o", label="accuracy")
    thresholds = [None if r.threshold == float("inf") else r.threshold for r in rows]
    ax.plot(coverages, thresholds, marker="s", label="confidence threshold")
    ax.set_xlabel("coverage")
    ax.set_ylabel(f"{report.criterion.upper()}")
    ax.set_ylim(0.0, 1.05)
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_METADATA)
    plt.close(fig)
