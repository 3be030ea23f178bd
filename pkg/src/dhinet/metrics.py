"""Box IoU, interpolated average precision and PR-curve export.

Boxes are (cx, cy, w, h) in normalized image coordinates. AP follows the
classic 11-point interpolation: detections are ranked by confidence (ties
broken by input order), matched greedily to at most one ground truth each,
and precision is interpolated as the maximum to the right of each recall
checkpoint 0.0, 0.1, ..., 1.0.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


def _corners(box):
    cx, cy, w, h = box
    return cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0


def iou(a, b) -> float:
    ax0, ay0, ax1, ay1 = _corners(a)
    bx0, by0, bx1, by1 = _corners(b)
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union if union > 0.0 else 0.0


def iou_elementwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU for matching stacks of boxes, last axis (cx, cy, w, h)."""
    ax0 = a[..., 0] - a[..., 2] / 2.0
    ay0 = a[..., 1] - a[..., 3] / 2.0
    ax1 = a[..., 0] + a[..., 2] / 2.0
    ay1 = a[..., 1] + a[..., 3] / 2.0
    bx0 = b[..., 0] - b[..., 2] / 2.0
    by0 = b[..., 1] - b[..., 3] / 2.0
    bx1 = b[..., 0] + b[..., 2] / 2.0
    by1 = b[..., 1] + b[..., 3] / 2.0
    iw = np.maximum(np.minimum(ax1, bx1) - np.maximum(ax0, bx0), 0.0)
    ih = np.maximum(np.minimum(ay1, by1) - np.maximum(ay0, by0), 0.0)
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return np.where(union > 0.0, inter / np.maximum(union, 1e-300), 0.0)


def wh_iou(anchors: np.ndarray, wh) -> np.ndarray:
    """IoU of origin-centered boxes: anchor (w, h) rows against one (w, h)."""
    anchors = np.asarray(anchors, dtype=np.float64)
    w, h = float(wh[0]), float(wh[1])
    inter = np.minimum(anchors[:, 0], w) * np.minimum(anchors[:, 1], h)
    union = anchors[:, 0] * anchors[:, 1] + w * h - inter
    return inter / union


def average_precision(detections, ground_truths, iou_threshold: float = 0.5):
    """Single-class AP over a set of images.

    ``detections``: iterable of (image_id, confidence, box); ``ground_truths``:
    mapping image_id -> list of boxes. Each ground truth matches at most one
    detection; duplicates count as false positives. IoU exactly at the
    threshold counts as a match. Returns (ap, recalls, precisions) where the
    curves carry one point per ranked detection.
    """
    total_gt = sum(len(v) for v in ground_truths.values())
    if total_gt == 0:
        raise ValueError("average precision is undefined without ground truth")
    order = sorted(range(len(detections)), key=lambda i: (-detections[i][1], i))
    matched: dict = {img: np.zeros(len(boxes), dtype=bool) for img, boxes in ground_truths.items()}
    tps = np.zeros(len(order))
    for rank, i in enumerate(order):
        img, _, box = detections[i]
        boxes = ground_truths.get(img, [])
        best, best_iou = -1, 0.0
        for gi, gt in enumerate(boxes):
            v = iou(box, gt)
            if v > best_iou:
                best, best_iou = gi, v
        if best >= 0 and best_iou >= iou_threshold and not matched[img][best]:
            matched[img][best] = True
            tps[rank] = 1.0
    tp = np.cumsum(tps)
    fp = np.cumsum(1.0 - tps)
    recalls = tp / total_gt
    precisions = tp / np.maximum(tp + fp, 1.0)
    ap = 0.0
    for checkpoint in np.linspace(0.0, 1.0, 11):
        above = precisions[recalls >= checkpoint - 1e-12]
        ap += above.max() / 11.0 if above.size else 0.0
    return float(ap), recalls, precisions


def mean_average_precision(per_class, iou_threshold: float = 0.5):
    """Mean AP over classes that have at least one ground truth.

    ``per_class``: mapping class_id -> (detections, ground_truths) in the
    shapes ``average_precision`` expects. Returns (mAP, {class_id: ap}).
    """
    aps = {}
    for cls, (dets, gts) in sorted(per_class.items()):
        if sum(len(v) for v in gts.values()) == 0:
            continue
        aps[cls] = average_precision(dets, gts, iou_threshold)[0]
    if not aps:
        raise ValueError("mean average precision is undefined: no class has ground truth")
    return float(np.mean(list(aps.values()))), aps


def export_pr_csv(path, recalls, precisions):
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["recall", "precision"])
        for r, p in zip(recalls, precisions):
            writer.writerow([f"{r:.10f}", f"{p:.10f}"])
