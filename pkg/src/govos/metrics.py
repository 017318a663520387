"""Region IoU (J), boundary F-measure (F) and CorLoc for binary masks."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Intersection over union; two empty masks score 1."""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    _check_same_shape(pred, gt)
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def j_mean(preds: Sequence, gts: Sequence) -> float:
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions for {len(gts)} ground-truth frames")
    if len(preds) == 0:
        raise ValueError("empty sequence")
    return float(np.mean([iou(p, g) for p, g in zip(preds, gts)]))


def boundary(mask: np.ndarray) -> np.ndarray:
    """Mask pixels with a 4-neighbour outside the mask (image border is not a neighbour)."""
    mask = np.asarray(mask, dtype=bool)
    interior = ndimage.binary_erosion(mask, structure=ndimage.generate_binary_structure(2, 1),
                                      border_value=1)
    return mask & ~interior


def default_tolerance(shape) -> int:
    """ceil(0.0075 * image diagonal), in pixels."""
    h, w = shape[:2]
    return int(math.ceil(0.0075 * math.hypot(h, w)))


def f_boundary(pred: np.ndarray, gt: np.ndarray, theta: Optional[int] = None) -> float:
    """Boundary F-measure with Chebyshev tolerance ``theta`` pixels."""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    _check_same_shape(pred, gt)
    theta = default_tolerance(pred.shape) if theta is None else theta
    if theta < 0:
        raise ValueError("theta must be >= 0")
    bp, bg = boundary(pred), boundary(gt)
    np_, ng = bp.sum(), bg.sum()
    if np_ == 0 and ng == 0:
        return 1.0
    if np_ == 0 or ng == 0:
        return 0.0
    square = np.ones((2 * theta + 1, 2 * theta + 1), dtype=bool)
    near_gt = ndimage.binary_dilation(bg, structure=square) if theta else bg
    near_pred = ndimage.binary_dilation(bp, structure=square) if theta else bp
    precision = (bp & near_gt).sum() / np_
    recall = (bg & near_pred).sum() / ng
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


def mask_to_bbox(mask: np.ndarray):
    """Inclusive (x_min, y_min, x_max, y_max) of the largest 4-connected component."""
    mask = np.asarray(mask, dtype=bool)
    labels, count = ndimage.label(mask)
    if count == 0:
        return None
    sizes = np.bincount(labels.ravel())[1:]
    biggest = int(np.argmax(sizes)) + 1
    ys, xs = np.nonzero(labels == biggest)
    return (int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


def box_iou(a, b) -> float:
    """IoU of inclusive pixel boxes."""
    ix = min(a[2], b[2]) - max(a[0], b[0]) + 1
    iy = min(a[3], b[3]) - max(a[1], b[1]) + 1
    inter = max(ix, 0) * max(iy, 0)
    area_a = (a[2] - a[0] + 1) * (a[3] - a[1] + 1)
    area_b = (b[2] - b[0] + 1) * (b[3] - b[1] + 1)
    return inter / float(area_a + area_b - inter)


def corloc(pred_boxes: Sequence, gt_boxes: Sequence) -> float:
    """Fraction of annotated frames whose predicted box has IoU >= 0.5.

    Frames without a ground-truth box are skipped; a missing prediction
    counts as a miss. Returns NaN when no frame is annotated.
    """
    if len(pred_boxes) != len(gt_boxes):
        raise ValueError("prediction and ground-truth box lists differ in length")
    hits = total = 0
    for p, g in zip(pred_boxes, gt_boxes):
        if g is None:
            continue
        total += 1
        if p is not None and box_iou(p, g) >= 0.5:
            hits += 1
    return hits / total if total else float("nan")


@dataclass
class MetricReport:
    j_mean: Optional[float] = None
    f_mean: Optional[float] = None
    corloc: Optional[float] = None
    per_frame_j: list = field(default_factory=list)
    per_frame_f: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items()
                if v is not None and not (k.startswith("per_frame") and not v)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = []
        for key, val in self.to_dict().items():
            if isinstance(val, list):
                val = " ".join(f"{v:.6f}" for v in val)
            else:
                val = f"{val:.6f}"
            lines.append(f"{key}={val}")
        return "\n".join(lines) + "\n"


def evaluate(preds: Optional[Sequence] = None, gt_masks: Optional[Sequence] = None,
             gt_boxes: Optional[Sequence] = None, theta: Optional[int] = None) -> MetricReport:
    """Compute J/F when mask ground truth is given, CorLoc whenever boxes are available."""
    report = MetricReport()
    if preds is None or len(preds) == 0:
        raise ValueError("no predictions")
    if gt_masks is not None:
        if len(preds) != len(gt_masks):
            raise ValueError(f"{len(preds)} predictions for {len(gt_masks)} ground-truth masks")
        report.per_frame_j = [iou(p, g) for p, g in zip(preds, gt_masks)]
        report.per_frame_f = [f_boundary(p, g, theta) for p, g in zip(preds, gt_masks)]
        report.j_mean = float(np.mean(report.per_frame_j))
        report.f_mean = float(np.mean(report.per_frame_f))
        if gt_boxes is None:
            gt_boxes = [mask_to_bbox(g) for g in gt_masks]
    if gt_boxes is not None:
        if len(preds) != len(gt_boxes):
            raise ValueError(f"{len(preds)} predictions for {len(gt_boxes)} ground-truth boxes")
        report.corloc = corloc([mask_to_bbox(p) for p in preds], gt_boxes)
    return report
