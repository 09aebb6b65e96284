from __future__ import annotations

import numpy as np


def confusion_matrix(pred: np.ndarray, labels: np.ndarray, classes: int) -> np.ndarray:
    idx = labels.astype(np.int64).ravel() * classes + pred.astype(np.int64).ravel()
    return np.bincount(idx, minlength=classes * classes).reshape(classes, classes)


def segmentation_metrics(pred: np.ndarray, labels: np.ndarray, classes: int) -> dict:
    """Pixel accuracy, per-class IoU (nan when a class is absent from both) and mIoU."""
    cm = confusion_matrix(pred, labels, classes)
    inter = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - np.diag(cm)
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, inter / union, np.nan)
    return {
        "pixel_accuracy": float(inter.sum() / max(cm.sum(), 1)),
        "iou": iou,
        "miou": float(np.nanmean(iou)) if np.any(union > 0) else float("nan"),
    }


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.ravel(a).astype(np.float64), np.ravel(b).astype(np.float64)
    a, b = a - a.mean(), b - b.mean()
    den = np.sqrt((a * a).sum() * (b * b).sum())
    return float((a * b).sum() / den) if den > 0 else float("nan")
