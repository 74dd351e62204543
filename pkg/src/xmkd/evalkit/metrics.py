"""Confusion matrices, IoU and accuracy."""
from __future__ import annotations

import numpy as np

from ..geometry import IGNORE


def confusion(pred, gt, num_classes: int, ignore_index: int = IGNORE) -> np.ndarray:
    """K x K counts, rows = ground truth, columns = prediction."""
    pred = np.asarray(pred, dtype=np.int64).reshape(-1)
    gt = np.asarray(gt, dtype=np.int64).reshape(-1)
    if pred.shape != gt.shape:
        raise ValueError("pred and gt differ in length")
    keep = gt != ignore_index
    pred, gt = pred[keep], gt[keep]
    if gt.size and (gt.max() >= num_classes or gt.min() < 0):
        raise ValueError("ground-truth label out of range")
    if pred.size and (pred.max() >= num_classes or pred.min() < 0):
        raise ValueError("predicted label out of range")
    return np.bincount(gt * num_classes + pred, minlength=num_classes**2).reshape(num_classes, num_classes)


def iou_per_class(cm: np.ndarray) -> np.ndarray:
    """IoU per class; NaN where the class has an empty union."""
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    union = cm.sum(axis=0) + cm.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, tp / union, np.nan)


def miou(cm: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean IoU over classes with a non-empty union, and the per-class vector."""
    ious = iou_per_class(cm)
    present = ~np.isnan(ious)
    value = float(ious[present].mean()) if present.any() else float("nan")
    return value, ious


def accuracy(cm: np.ndarray) -> float:
    total = cm.sum()
    return float(np.trace(cm) / total) if total else float("nan")
