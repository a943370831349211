"""Confusion-matrix metrics and cross-fold mean/SD aggregation.

Multiclass precision, recall and F1 are macro-averaged: per-class
values (with empty rows/columns scoring 0) are averaged with equal
class weights.  Fold aggregation uses exact rational arithmetic via the
statistics module, so the result is bit-identical under any fold
ordering.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass

import numpy as np

METRIC_NAMES = ("accuracy", "precision", "recall", "f1")


@dataclass(frozen=True)
class MetricSet:
    accuracy: float
    precision: float
    recall: float
    f1: float


def confusion(preds, labels, k: int) -> np.ndarray:
    """Count matrix with rows = true class, columns = predicted class."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.ndim != 1 or labels.ndim != 1:
        raise ValueError("preds and labels must be 1-D")
    if len(preds) != len(labels):
        raise ValueError(f"length mismatch: {len(preds)} preds vs {len(labels)} labels")
    if len(preds) == 0:
        raise ValueError("cannot build a confusion matrix from no predictions")
    if k < 1:
        raise ValueError("k must be >= 1")
    for name, arr in (("preds", preds), ("labels", labels)):
        if arr.min() < 0 or arr.max() >= k:
            raise ValueError(f"{name} contain classes outside [0, {k})")
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def metric_set(cm: np.ndarray) -> MetricSet:
    """Accuracy plus macro precision/recall/F1 from a confusion matrix."""
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError(f"confusion matrix must be square, got {cm.shape}")
    if (cm < 0).any():
        raise ValueError("confusion matrix has negative counts")
    total = int(cm.sum())
    if total == 0:
        raise ValueError("confusion matrix is empty")
    k = cm.shape[0]
    diag = np.diag(cm).astype(np.float64)
    col = cm.sum(axis=0).astype(np.float64)
    row = cm.sum(axis=1).astype(np.float64)
    precisions = np.where(col > 0, diag / np.where(col > 0, col, 1.0), 0.0)
    recalls = np.where(row > 0, diag / np.where(row > 0, row, 1.0), 0.0)
    pr = precisions + recalls
    f1s = np.where(pr > 0, 2.0 * precisions * recalls / np.where(pr > 0, pr, 1.0), 0.0)
    return MetricSet(
        accuracy=float(np.trace(cm)) / total,
        precision=float(precisions.sum()) / k,
        recall=float(recalls.sum()) / k,
        f1=float(f1s.sum()) / k,
    )


def aggregate(per_fold: list[MetricSet]) -> dict[str, tuple[float, float]]:
    """Mean and sample SD (n-1 divisor; 0 when n=1) per metric."""
    if not per_fold:
        raise ValueError("no folds to aggregate")
    out = {}
    for name in METRIC_NAMES:
        values = [getattr(m, name) for m in per_fold]
        mean = statistics.mean(values)
        sd = statistics.stdev(values) if len(values) > 1 else 0.0
        out[name] = (float(mean), float(sd))
    return out
