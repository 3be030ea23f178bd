"""Single-stage detection loss: classification, localization and confidence.

All three components are sums of squared errors over grid cells. Centers and
square-rooted extents carry a coordinate emphasis factor (default 5); empty
cells contribute confidence error damped by a no-object factor (default 0.5).
The confidence target for a responsible anchor slot is the IoU between its
decoded box and the ground truth, treated as a constant per step; everywhere
else it is zero. The total is exactly the sum of the three components.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .metrics import iou_elementwise, wh_iou
from .tensor import Tensor


@dataclass(frozen=True)
class LossWeights:
    coord: float = 5.0
    noobj: float = 0.5


@dataclass
class TargetAssignment:
    """Dense grid targets for one batch.

    Each ground-truth box lands in the cell containing its center and the
    free anchor with the highest width/height IoU. ``class_anchor_mask``
    marks exactly one responsible anchor per occupied cell, which carries
    that cell's class vector.
    """

    obj_mask: np.ndarray          # (B,S,S,A) 1.0 where a box is assigned
    class_anchor_mask: np.ndarray  # (B,S,S,A) one slot per occupied cell
    cell_mask: np.ndarray         # (B,S,S)   1.0 where the cell holds an object
    boxes: np.ndarray             # (B,S,S,A,4) assigned (cx,cy,w,h)
    classes: np.ndarray           # (B,S,S,K) one-hot class per occupied cell
    num_assigned: int = 0
    dropped: int = 0


def build_targets(batch_annotations, grid: int, anchors: np.ndarray,
                  num_classes: int) -> TargetAssignment:
    anchors = np.asarray(anchors, dtype=np.float64)
    b = len(batch_annotations)
    s, a = grid, anchors.shape[0]
    assign = TargetAssignment(
        obj_mask=np.zeros((b, s, s, a)),
        class_anchor_mask=np.zeros((b, s, s, a)),
        cell_mask=np.zeros((b, s, s)),
        boxes=np.zeros((b, s, s, a, 4)),
        classes=np.zeros((b, s, s, num_classes)),
    )
    for bi, annotations in enumerate(batch_annotations):
        for cid, cx, cy, w, h in annotations:
            cid = int(cid)
            if not 0 <= cid < num_classes:
                raise ValueError(f"class id {cid} outside [0, {num_classes})")
            if not (0.0 <= cx <= 1.0 and 0.0 <= cy <= 1.0 and w > 0.0 and h > 0.0):
                raise ValueError(f"malformed box {(cx, cy, w, h)}")
            row = min(int(cy * s), s - 1)
            col = min(int(cx * s), s - 1)
            ranked = np.argsort(-wh_iou(anchors, (w, h)), kind="stable")
            slot = next((ai for ai in ranked if assign.obj_mask[bi, row, col, ai] == 0.0), None)
            if slot is None:
                assign.dropped += 1
                continue
            assign.obj_mask[bi, row, col, slot] = 1.0
            assign.boxes[bi, row, col, slot] = (cx, cy, w, h)
            if assign.cell_mask[bi, row, col] == 0.0:
                assign.cell_mask[bi, row, col] = 1.0
                assign.class_anchor_mask[bi, row, col, slot] = 1.0
                assign.classes[bi, row, col, cid] = 1.0
            assign.num_assigned += 1
    return assign


def decode_head(raw: Tensor, anchors: np.ndarray) -> dict:
    """Decode raw head output (B,S,S,A,5+K) into box/confidence tensors.

    Centers are sigmoid offsets inside their cell; extents scale anchors by
    a clipped exponential; class scores are softmax per anchor.
    """
    anchors = np.asarray(anchors, dtype=np.float64)
    b, s, s2, a, depth = raw.data.shape
    if s != s2 or a != anchors.shape[0] or depth < 6:
        raise ValueError(f"raw head shape {raw.data.shape} inconsistent with {a} anchors")
    cols = np.arange(s).reshape(1, 1, s, 1)
    rows = np.arange(s).reshape(1, s, 1, 1)
    cx = (T.sigmoid(raw[..., 0]) + cols) * (1.0 / s)
    cy = (T.sigmoid(raw[..., 1]) + rows) * (1.0 / s)
    w = T.exp(T.clip(raw[..., 2], -8.0, 8.0)) * anchors[:, 0]
    h = T.exp(T.clip(raw[..., 3], -8.0, 8.0)) * anchors[:, 1]
    conf = T.sigmoid(raw[..., 4])
    class_probs = T.softmax(raw[..., 5:], axis=-1)
    return {"cx": cx, "cy": cy, "w": w, "h": h, "conf": conf, "class_probs": class_probs}


def confidence_targets(decoded: dict, assign: TargetAssignment) -> np.ndarray:
    """IoU between decoded boxes and their assigned truth, zero elsewhere."""
    pred = np.stack([decoded["cx"].data, decoded["cy"].data,
                     decoded["w"].data, decoded["h"].data], axis=-1)
    return assign.obj_mask * iou_elementwise(pred, assign.boxes)


def classification_loss(cell_probs: Tensor, class_targets: np.ndarray,
                        cell_mask: np.ndarray) -> Tensor:
    """Sum over occupied cells of squared class-probability error."""
    diff = cell_probs - class_targets
    return (diff * diff * cell_mask[..., None]).sum()


def localization_loss(cx: Tensor, cy: Tensor, w: Tensor, h: Tensor,
                      target_boxes: np.ndarray, obj_mask: np.ndarray,
                      weights: LossWeights = LossWeights()) -> Tensor:
    """Coordinate-weighted squared error on centers and square-rooted extents."""
    dx = cx - target_boxes[..., 0]
    dy = cy - target_boxes[..., 1]
    centers = ((dx * dx + dy * dy) * obj_mask).sum()
    dw = T.sqrt(w) - np.sqrt(target_boxes[..., 2])
    dh = T.sqrt(h) - np.sqrt(target_boxes[..., 3])
    extents = ((dw * dw + dh * dh) * obj_mask).sum()
    return weights.coord * centers + weights.coord * extents


def confidence_loss(conf: Tensor, conf_targets: np.ndarray, obj_mask: np.ndarray,
                    weights: LossWeights = LossWeights()) -> Tensor:
    diff = conf - conf_targets
    objective = (diff * diff * obj_mask).sum()
    background = (conf * conf * (1.0 - obj_mask)).sum()
    return objective + weights.noobj * background


def total_loss(classification: Tensor, localization: Tensor, confidence: Tensor) -> Tensor:
    """The total is exactly the sum of the three components."""
    return classification + localization + confidence


def detection_loss(raw: Tensor, assign: TargetAssignment, anchors: np.ndarray,
                   weights: LossWeights = LossWeights(),
                   conf_targets: np.ndarray | None = None):
    """Full loss from raw head output. ``conf_targets`` may be frozen by the
    caller (gradient checking); by default they are recomputed from the
    current decoded boxes and treated as constants."""
    decoded = decode_head(raw, anchors)
    if conf_targets is None:
        conf_targets = confidence_targets(decoded, assign)
    cell_probs = (decoded["class_probs"] * assign.class_anchor_mask[..., None]).sum(axis=3)
    parts = {
        "classification": classification_loss(cell_probs, assign.classes, assign.cell_mask),
        "localization": localization_loss(decoded["cx"], decoded["cy"], decoded["w"],
                                          decoded["h"], assign.boxes, assign.obj_mask, weights),
        "confidence": confidence_loss(decoded["conf"], conf_targets, assign.obj_mask, weights),
    }
    return total_loss(parts["classification"], parts["localization"], parts["confidence"]), parts
