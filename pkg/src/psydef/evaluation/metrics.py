"""Classification metrics over the fixed 9-label universe, plus sink analysis."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

NUM_LABELS = 9


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class MetricsReport:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class: dict[int, ClassMetrics]
    confusion: np.ndarray
    confusion_row_norm: np.ndarray

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "per_class": {str(k): vars(v) for k, v in self.per_class.items()},
            "confusion": self.confusion.tolist(),
            "confusion_row_norm": self.confusion_row_norm.tolist(),
        }


def _check_labels(labels: Sequence[int], name: str, num_labels: int) -> np.ndarray:
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a flat label list")
    if arr.size and (not np.issubdtype(arr.dtype, np.integer) or arr.min() < 0 or arr.max() >= num_labels):
        raise ValueError(f"{name} contains labels outside 0..{num_labels - 1}")
    return arr.astype(int)


def confusion_matrix(preds: Sequence[int], golds: Sequence[int], num_labels: int = NUM_LABELS) -> np.ndarray:
    """Rows are gold labels, columns are predictions."""
    p = _check_labels(preds, "preds", num_labels)
    g = _check_labels(golds, "golds", num_labels)
    cm = np.zeros((num_labels, num_labels), dtype=int)
    np.add.at(cm, (g, p), 1)
    return cm


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros_like(num, dtype=float)
    np.divide(num, den, out=out, where=den > 0)
    return out


def evaluate(preds: Sequence[int], golds: Sequence[int], num_labels: int = NUM_LABELS) -> MetricsReport:
    """Accuracy and macro P/R/F1 over all ``num_labels`` classes.

    Classes without predictions or support score 0 for the undefined quantity and
    still count in the macro mean.
    """
    if len(preds) != len(golds):
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(golds)} gold labels")
    if len(golds) == 0:
        raise ValueError("evaluate needs at least one example")
    cm = confusion_matrix(preds, golds, num_labels)
    tp = np.diag(cm).astype(float)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    precision = _safe_div(tp, predicted.astype(float))
    recall = _safe_div(tp, support.astype(float))
    f1 = _safe_div(2 * precision * recall, precision + recall)
    row_norm = _safe_div(cm.astype(float), support[:, None].astype(float))
    return MetricsReport(
        accuracy=float(tp.sum() / cm.sum()),
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        per_class={k: ClassMetrics(float(precision[k]), float(recall[k]), float(f1[k]), int(support[k]))
                   for k in range(num_labels)},
        confusion=cm,
        confusion_row_norm=row_norm,
    )


@dataclass
class SinkReport:
    sink_label: int
    absorbed: dict[int, int]        # true class -> count predicted as sink
    absorbed_ratio: dict[int, float]  # share of that class's support
    total_absorbed: int
    total_errors: int
    error_share: float

    def to_dict(self) -> dict:
        return {"sink_label": self.sink_label,
                "absorbed": {str(k): v for k, v in self.absorbed.items()},
                "absorbed_ratio": {str(k): v for k, v in self.absorbed_ratio.items()},
                "total_absorbed": self.total_absorbed, "total_errors": self.total_errors,
                "error_share": self.error_share}


def sink_analysis(confusion: np.ndarray, sink_label: int = 7) -> SinkReport:
    """How many errors from each other class land in the ``sink_label`` column."""
    cm = np.asarray(confusion)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError("confusion must be a square matrix")
    k = cm.shape[0]
    support = cm.sum(axis=1)
    absorbed = {c: int(cm[c, sink_label]) for c in range(k) if c != sink_label}
    ratio = {c: (absorbed[c] / support[c] if support[c] else 0.0) for c in absorbed}
    total_errors = int(cm.sum() - np.trace(cm))
    total = sum(absorbed.values())
    return SinkReport(sink_label, absorbed, ratio, total, total_errors,
                      total / total_errors if total_errors else 0.0)


def off_diagonal(confusion: np.ndarray) -> list[tuple[int, int, int]]:
    """(true, predicted, count) for every non-zero off-diagonal cell."""
    cm = np.asarray(confusion)
    return [(i, j, int(cm[i, j])) for i in range(cm.shape[0]) for j in range(cm.shape[1])
            if i != j and cm[i, j]]
