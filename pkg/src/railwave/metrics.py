"""Confusion matrices and per-class precision / recall / F1."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import numpy.typing as npt

from railwave.errors import BadIndex, EmptyMatrix, IoFailure, LengthMismatch


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Counts indexed ``[true class, predicted class]``."""

    counts: npt.NDArray[np.int64]
    class_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        counts = np.array(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError("confusion matrix must be square")
        if np.any(counts < 0):
            raise ValueError("confusion counts must be non-negative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        names = tuple(self.class_names) or tuple(f"TYPE{i}" for i in range(counts.shape[0]))
        if len(names) != counts.shape[0]:
            raise ValueError("one class name per row is required")
        object.__setattr__(self, "class_names", names)

    @property
    def k(self) -> int:
        return int(self.counts.shape[0])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.k != other.k:
            raise LengthMismatch("cannot merge confusion matrices of different size")
        return ConfusionMatrix(self.counts + other.counts, self.class_names)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    def permuted(self, order: Sequence[int]) -> "ConfusionMatrix":
        """Relabel so that new class ``i`` is old class ``order[i]``."""
        idx = np.asarray(order)
        return ConfusionMatrix(self.counts[np.ix_(idx, idx)], tuple(self.class_names[i] for i in idx))


@dataclass(frozen=True)
class ClassMetrics:
    """Per-class scores; ``None`` marks a 0/0 ratio."""

    class_name: str
    precision: float | None
    recall: float | None
    f1: float | None


def accumulate(preds: npt.ArrayLike, labels: npt.ArrayLike, k: int) -> ConfusionMatrix:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise LengthMismatch(f"preds {preds.shape} and labels {labels.shape} must be equal-length 1-D")
    for arr, what in ((preds, "prediction"), (labels, "label")):
        if arr.size and (not np.issubdtype(arr.dtype, np.integer) or arr.min() < 0 or arr.max() >= k):
            raise BadIndex(f"{what} values must be integers in [0, {k})")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (labels.astype(np.int64), preds.astype(np.int64)), 1)
    return ConfusionMatrix(counts)


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise EmptyMatrix("accuracy of an empty confusion matrix is undefined")
    return float(np.trace(cm.counts)) / cm.total


def _ratio(num: float, den: float) -> float | None:
    return None if den == 0 else num / den


def f1_score(precision: float | None, recall: float | None) -> float | None:
    """Harmonic mean; undefined when either input is undefined or both are 0."""
    if precision is None or recall is None or precision + recall == 0:
        return None
    return 2.0 * precision * recall / (precision + recall)


def per_class_metrics(cm: ConfusionMatrix) -> list[ClassMetrics]:
    if cm.total == 0:
        raise EmptyMatrix("no samples in confusion matrix")
    tp = np.diag(cm.counts)
    col = cm.counts.sum(axis=0)
    row = cm.counts.sum(axis=1)
    out = []
    for i, name in enumerate(cm.class_names):
        p = _ratio(float(tp[i]), float(col[i]))
        r = _ratio(float(tp[i]), float(row[i]))
        out.append(ClassMetrics(name, p, r, f1_score(p, r)))
    return out


def micro_precision_recall(cm: ConfusionMatrix) -> tuple[float, float]:
    tp = float(np.trace(cm.counts))
    fp = float(cm.counts.sum(axis=0).sum() - tp)
    fn = float(cm.counts.sum(axis=1).sum() - tp)
    return tp / (tp + fp), tp / (tp + fn)


def format_metric(value: float | None) -> str:
    return "" if value is None else f"{value:.4f}"


def render_table(metrics: Sequence[ClassMetrics]) -> str:
    """Plain-text table laid out like a Class / Precision / Recall / F1 Score report."""
    header = ("Class", "Precision", "Recall", "F1 Score")
    rows = [(m.class_name, format_metric(m.precision), format_metric(m.recall), format_metric(m.f1)) for m in metrics]
    widths = [max(len(r[i]) for r in [header, *rows]) for i in range(4)]
    sep = "+" + "+".join("-" * (w + 2) for w in widths) + "+"
    lines = [sep, "| " + " | ".join(h.center(w) for h, w in zip(header, widths)) + " |", sep]
    for r in rows:
        lines.append("| " + " | ".join(v.center(w) for v, w in zip(r, widths)) + " |")
    lines.append(sep)
    return "\n".join(lines) + "\n"


def emit_report(cm: ConfusionMatrix, metrics: Sequence[ClassMetrics], path: str | Path) -> dict[str, Path]:
    """Write ``confusion_matrix.csv``, ``metrics.csv`` and ``metrics.txt`` into ``path``."""
    out_dir = Path(path)
    files = {
        "confusion": out_dir / "confusion_matrix.csv",
        "metrics": out_dir / "metrics.csv",
        "table": out_dir / "metrics.txt",
    }
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(files["confusion"], "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["true\\pred", *cm.class_names])
            for name, row in zip(cm.class_names, cm.counts):
                writer.writerow([name, *(int(v) for v in row)])
        with open(files["metrics"], "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["class", "precision", "recall", "f1"])
            for m in metrics:
                writer.writerow([m.class_name, format_metric(m.precision), format_metric(m.recall), format_metric(m.f1)])
        files["table"].write_text(
            render_table(metrics) + f"Accuracy: {format_metric(accuracy(cm))}\n"
        )
    except OSError as exc:
        raise IoFailure(f"cannot write report to {out_dir}: {exc}") from exc
    return files


def read_confusion_csv(path: str | Path) -> ConfusionMatrix:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    names = tuple(rows[0][1:])
    counts = np.array([[int(v) for v in r[1:]] for r in rows[1:]], dtype=np.int64)
    return ConfusionMatrix(counts, names)
