"""Confusion matrix and the classification metrics derived from it."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class MetricsReport:
    confusion: np.ndarray  # rows = true class, cols = predicted
    wap: float
    ua: float
    weighted_f1: float
    per_class_precision: list[float]
    per_class_recall: list[float]
    per_class_f1: list[float]
    excluded_classes: list[int] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "confusion": self.confusion.tolist(),
            "wap": self.wap,
            "ua": self.ua,
            "weighted_f1": self.weighted_f1,
            "per_class_precision": self.per_class_precision,
            "per_class_recall": self.per_class_recall,
            "per_class_f1": self.per_class_f1,
            "excluded_classes": self.excluded_classes,
        }


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"label/prediction length mismatch: {y_true.shape} vs {y_pred.shape}")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def metrics_from_confusion(cm: np.ndarray) -> MetricsReport:
    """WAP = support-weighted precision, UA = mean per-class recall,
    weighted F1 = support-weighted per-class F1."""
    cm = np.asarray(cm, dtype=np.int64)
    k = cm.shape[0]
    support = cm.sum(axis=1).astype(np.float64)
    predicted = cm.sum(axis=0).astype(np.float64)
    total = support.sum()
    tp = np.diag(cm).astype(np.float64)

    precision = np.divide(tp, predicted, out=np.zeros(k), where=predicted > 0)
    recall = np.divide(tp, support, out=np.zeros(k), where=support > 0)
    pr = precision + recall
    f1 = np.divide(2.0 * precision * recall, pr, out=np.zeros(k), where=pr > 0)

    present = support > 0
    excluded = [int(i) for i in np.nonzero(~present)[0]]
    if excluded:
        log.warning("classes %s absent from ground truth; excluded from UA", excluded)
    weights = support / total if total > 0 else np.zeros(k)
    return MetricsReport(
        confusion=cm,
        wap=float((weights * precision).sum()),
        ua=float(recall[present].mean()) if present.any() else 0.0,
        weighted_f1=float((weights * f1).sum()),
        per_class_precision=precision.tolist(),
        per_class_recall=recall.tolist(),
        per_class_f1=f1.tolist(),
        excluded_classes=excluded,
    )


def evaluate_predictions(y_true, y_pred, n_classes: int) -> MetricsReport:
    return metrics_from_confusion(confusion_matrix(y_true, y_pred, n_classes))
