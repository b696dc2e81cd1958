"""Segmentation metrics: per-class IOU, mean IOU, pixel accuracy, error maps.

Pixels that are MISSING in the ground truth are never scored. Pixels that
are MISSING in the prediction count as wrong by default; pass
ignore_missing=True to score only pixels predicted by both maps (both
readings of the headline metric are exposed deliberately).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import MISSING, SegmentationMap

# error_map cell codes
CORRECT = 0
WRONG = 1
NOT_CONSIDERED = 2


@dataclass(frozen=True)
class EvalReport:
    per_class_iou: np.ndarray   # (K,), NaN for classes absent from both maps
    mean_iou: float
    pixel_accuracy: float
    confusion: np.ndarray       # (K, K) int64, rows = gt, cols = pred
    considered: int             # pixels entering the score
    pred_missing: int           # considered pixels the prediction left MISSING


def evaluate(pred: SegmentationMap, gt: SegmentationMap,
             ignore_missing: bool = False) -> EvalReport:
    """Score a predicted segmentation against ground truth."""
    if (pred.height, pred.width) != (gt.height, gt.width):
        raise ValueError(
            f"prediction {pred.width}x{pred.height} and ground truth "
            f"{gt.width}x{gt.height} differ")
    if pred.num_classes != gt.num_classes:
        raise ValueError(
            f"class counts differ: {pred.num_classes} vs {gt.num_classes}")
    k = gt.num_classes

    considered = ~gt.missing
    if ignore_missing:
        considered &= ~pred.missing
    p = pred.classes[considered].astype(np.int64)
    g = gt.classes[considered].astype(np.int64)
    n = p.size

    pred_missing = int(np.count_nonzero(p == MISSING))
    correct = int(np.count_nonzero(p == g))
    accuracy = correct / n if n else 1.0

    pred_counts = np.bincount(p[p != MISSING], minlength=k)[:k]
    gt_counts = np.bincount(g, minlength=k)[:k]
    inter = np.bincount(g[p == g], minlength=k)[:k]
    union = pred_counts + gt_counts - inter
    with np.errstate(invalid="ignore"):
        iou = np.where(union > 0, inter / np.maximum(union, 1), np.nan)
    defined = union > 0
    mean_iou = float(iou[defined].mean()) if defined.any() else 1.0

    both = p != MISSING
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (g[both], p[both]), 1)

    return EvalReport(iou, mean_iou, accuracy, confusion, n, pred_missing)


def error_map(pred: SegmentationMap, gt: SegmentationMap) -> np.ndarray:
    """Per-pixel verdict grid: CORRECT, WRONG, or NOT_CONSIDERED (gt MISSING)."""
    if (pred.height, pred.width) != (gt.height, gt.width):
        raise ValueError("prediction and ground truth dimensions differ")
    out = np.where(pred.classes == gt.classes, np.uint8(CORRECT), np.uint8(WRONG))
    out[gt.missing] = NOT_CONSIDERED
    return out


def format_report(report: EvalReport) -> str:
    """Key/value text form: one `key value` pair per line."""
    lines = [
        f"mean_iou {report.mean_iou!r}",
        f"pixel_accuracy {report.pixel_accuracy!r}",
        f"considered {report.considered}",
        f"pred_missing {report.pred_missing}",
    ]
    for cls, iou in enumerate(report.per_class_iou):
        value = "undefined" if np.isnan(iou) else repr(float(iou))
        lines.append(f"class_{cls:02d}_iou {value}")
    return "\n".join(lines) + "\n"
