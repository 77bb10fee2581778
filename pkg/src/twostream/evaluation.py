"""Confusion matrices, accuracy reports, and their on-disk renderings.

Accuracy bookkeeping stays in exact integer counts; floating point enters
only when a report is formatted. The comparison CSV mirrors the per-class
C0..C5 + Total column layout, storing one-decimal percents alongside the raw
correct/count ratios.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, ShapeError
from .pgm import write_pgm


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[true][predicted]; every evaluated item increments one cell."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ShapeError(f"confusion matrix must be square, got {counts.shape}")
        if counts.shape[0] < 1:
            raise ShapeError("confusion matrix needs at least one class")
        if not np.issubdtype(counts.dtype, np.integer):
            raise ShapeError(f"confusion counts must be integers, got {counts.dtype}")
        if counts.min() < 0:
            raise ShapeError("confusion counts must be nonnegative")
        object.__setattr__(self, "counts", counts.astype(np.int64))

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)


def confusion(predictions, labels, n_classes: int = None) -> ConfusionMatrix:
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape or predictions.ndim != 1:
        raise ShapeError(f"predictions {predictions.shape} and labels "
                         f"{labels.shape} must be equal-length vectors")
    if n_classes is None:
        if predictions.size == 0:
            raise DataError("cannot size a confusion matrix from zero items")
        n_classes = int(max(predictions.max(), labels.max())) + 1
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    for i, (pred, true) in enumerate(zip(predictions, labels)):
        if not 0 <= true < n_classes:
            raise DataError(f"item {i}: label {true} outside [0, {n_classes})")
        if not 0 <= pred < n_classes:
            raise DataError(f"item {i}: prediction {pred} outside [0, {n_classes})")
        counts[true, pred] += 1
    return ConfusionMatrix(counts=counts)


@dataclass(frozen=True)
class EvalReport:
    """Per-class recall and total accuracy for one method.

    A class with zero test items has recall None (undefined); such classes
    contribute nothing to the total, which stays the exact ratio of the
    integer trace over the integer total count.
    """

    method: str
    class_correct: tuple  # diagonal entries
    class_counts: tuple   # row sums
    correct: int
    total: int

    @property
    def n_classes(self) -> int:
        return len(self.class_counts)

    @property
    def per_class_accuracy(self) -> tuple:
        return tuple(
            None if count == 0 else correct / count
            for correct, count in zip(self.class_correct, self.class_counts))

    @property
    def total_accuracy(self) -> float:
        return self.correct / self.total


def report(matrix: ConfusionMatrix, method: str) -> EvalReport:
    if matrix.total == 0:
        raise DataError("cannot report on an empty confusion matrix")
    diag = np.diag(matrix.counts)
    rows = matrix.row_sums()
    return EvalReport(
        method=method,
        class_correct=tuple(int(d) for d in diag),
        class_counts=tuple(int(r) for r in rows),
        correct=int(diag.sum()),
        total=matrix.total,
    )


def _percent(correct: int, count: int) -> str:
    if count == 0:
        return "n/a"
    return f"{100.0 * correct / count:.1f}"


def _class_headers(n: int) -> list:
    return [f"C{j}" for j in range(n)]


def format_report_csv(reports) -> str:
    """One row per method: one-decimal percents, then the raw ratios."""
    reports = list(reports)
    if not reports:
        raise DataError("no reports to format")
    n = reports[0].n_classes
    if any(r.n_classes != n for r in reports):
        raise ShapeError("reports disagree on the number of classes")
    cols = _class_headers(n) + ["Total"]
    header = ["method"] + cols + [f"{c}_ratio" for c in cols]
    lines = [",".join(header)]
    for r in reports:
        percents = [_percent(c, k) for c, k in zip(r.class_correct, r.class_counts)]
        percents.append(_percent(r.correct, r.total))
        ratios = [f"{c}/{k}" for c, k in zip(r.class_correct, r.class_counts)]
        ratios.append(f"{r.correct}/{r.total}")
        lines.append(",".join([r.method] + percents + ratios))
    return "\n".join(lines) + "\n"


def write_report_csv(reports, path) -> None:
    Path(path).write_text(format_report_csv(reports))


def format_comparison_table(reports) -> str:
    """Fixed-width text table: method rows by C0..C5 + Total columns."""
    reports = list(reports)
    if not reports:
        raise DataError("no reports to format")
    n = reports[0].n_classes
    cols = _class_headers(n) + ["Total"]
    name_width = max(len("method"), max(len(r.method) for r in reports))
    lines = ["  ".join(["method".ljust(name_width)]
                       + [c.rjust(6) for c in cols])]
    for r in reports:
        cells = [_percent(c, k) for c, k in zip(r.class_correct, r.class_counts)]
        cells.append(_percent(r.correct, r.total))
        lines.append("  ".join([r.method.ljust(name_width)]
                               + [c.rjust(6) for c in cells]))
    return "\n".join(lines) + "\n"


def format_confusion_csv(matrix: ConfusionMatrix) -> str:
    names = _class_headers(matrix.n_classes)
    lines = [",".join(["true/pred"] + names)]
    for name, row in zip(names, matrix.counts):
        lines.append(",".join([name] + [str(int(v)) for v in row]))
    return "\n".join(lines) + "\n"


def write_confusion_csv(matrix: ConfusionMatrix, path) -> None:
    Path(path).write_text(format_confusion_csv(matrix))


def parse_confusion_csv(text: str, source: str = "confusion CSV") -> ConfusionMatrix:
    """Inverse of format_confusion_csv; rejects anything else as FormatError."""
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines or not lines[0].startswith("true/pred"):
        raise FormatError(f"{source}: missing 'true/pred' header row")
    n = len(lines[0].split(",")) - 1
    if len(lines) != n + 1:
        raise FormatError(f"{source}: expected {n} rows after the header, "
                          f"got {len(lines) - 1}")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != n + 1:
            raise FormatError(f"{source}:{lineno}: expected {n + 1} cells, "
                              f"got {len(cells)}")
        try:
            rows.append([int(cell) for cell in cells[1:]])
        except ValueError:
            raise FormatError(f"{source}:{lineno}: counts must be "
                              f"integers") from None
    return ConfusionMatrix(np.array(rows, dtype=np.int64))


def read_confusion_csv(path) -> ConfusionMatrix:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"confusion CSV {p} not found")
    return parse_confusion_csv(p.read_text(), source=str(p))


def render_confusion_pgm(matrix: ConfusionMatrix, path, cell: int = 32) -> None:
    """Grayscale confusion image: each row scaled by its own sum, so every
    row of a populated matrix uses the full ramp; cells `cell` px square."""
    if cell < 1:
        raise ShapeError(f"cell size must be >= 1, got {cell}")
    counts = matrix.counts.astype(np.float64)
    rows = counts.sum(axis=1, keepdims=True)
    np.divide(counts, rows, out=counts, where=rows > 0)
    img = np.round(counts * 255.0).astype(np.uint8)
    img = np.repeat(np.repeat(img, cell, axis=0), cell, axis=1)
    write_pgm(path, img)
