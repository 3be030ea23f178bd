"""Training and evaluation drivers shared by the command line and tests."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .detector import Detector, ModelConfig, kmeans_anchors
from .loss import LossWeights, build_targets, detection_loss
from .metrics import average_precision, mean_average_precision
from .optim import Adam
from .synthdata import Sample, resize_nearest
from .tensor import Tensor, backward


class NumericalError(RuntimeError):
    """Raised when the loss leaves the finite range."""


@dataclass
class TrainResult:
    model: Detector
    cfg: ModelConfig
    losses: list  # mean per-image loss per epoch


def anchors_from_samples(samples, count: int, seed: int = 0) -> np.ndarray:
    boxes = np.array([(w, h) for s in samples for _, _, _, w, h in s.annotations])
    if boxes.size == 0:
        raise ValueError("no annotated boxes to cluster anchors from")
    if len(boxes) < count:  # degenerate split; repeat boxes rather than fail
        boxes = np.tile(boxes, (int(np.ceil(count / len(boxes))), 1))
        boxes = boxes + np.linspace(0.0, 1e-6, len(boxes))[:, None]
    return kmeans_anchors(boxes, count, seed=seed)


def _batched(samples, size: int):
    rgb = np.stack([s.rgb for s in samples])
    depth = np.stack([s.depth for s in samples])
    annotations = [s.annotations for s in samples]
    return rgb, depth, annotations


def train_model(cfg: ModelConfig, samples: list[Sample], epochs: int, lr: float,
                seed: int = 0, batch_size: int = 12,
                weights: LossWeights = LossWeights(), anchors=None,
                lr_drop_epoch: int | None = None, lr_drop_factor: float = 0.25,
                log=None) -> TrainResult:
    """Train from scratch; fully deterministic for a given seed and data.

    ``lr_drop_epoch`` multiplies the learning rate by ``lr_drop_factor`` once,
    at the start of that epoch.
    """
    if not samples:
        raise ValueError("training requires at least one sample")
    samples = [resize_nearest(s, cfg.input_size) for s in samples]
    if anchors is None:
        anchors = anchors_from_samples(samples, len(cfg.anchors), seed=seed)
    cfg = replace(cfg, anchors=tuple(tuple(a) for a in np.asarray(anchors)))
    anchor_arr = np.asarray(cfg.anchors)

    rng = np.random.default_rng(seed)
    model = Detector(cfg, rng)
    optimizer = Adam(model.parameters(), lr=lr)
    losses = []
    for epoch in range(epochs):
        if lr_drop_epoch is not None and epoch == lr_drop_epoch:
            optimizer.lr = lr * lr_drop_factor
        order = rng.permutation(len(samples))
        epoch_total = 0.0
        for start in range(0, len(order), batch_size):
            chunk = [samples[i] for i in order[start : start + batch_size]]
            rgb, depth, annotations = _batched(chunk, cfg.input_size)
            assign = build_targets(annotations, cfg.grid_size, anchor_arr, cfg.num_classes)
            raw = model.forward(Tensor(rgb), depth)
            total, _ = detection_loss(raw, assign, anchor_arr, weights)
            total = total * (1.0 / len(chunk))
            value = total.item()
            if not np.isfinite(value):
                raise NumericalError(f"non-finite loss at epoch {epoch}: {value}")
            epoch_total += value * len(chunk)
            optimizer.zero_grad()
            backward(total)
            optimizer.step()
        losses.append(epoch_total / len(samples))
        if log is not None:
            log(epoch, losses[-1])
    return TrainResult(model=model, cfg=cfg, losses=losses)


@dataclass
class EvalResult:
    mean_ap: float
    per_class: dict          # class_id -> ap
    pr_curves: dict          # class_id -> (recalls, precisions)
    num_images: int


def evaluate_model(model: Detector, samples: list[Sample], iou_threshold: float = 0.5,
                   confidence_threshold: float = 0.05, batch_size: int = 8) -> EvalResult:
    """VOC-style evaluation over one split."""
    if not samples:
        raise ValueError("evaluation requires at least one sample")
    cfg = model.cfg
    samples = [resize_nearest(s, cfg.input_size) for s in samples]
    was_training = model.training
    model.eval()
    detections = {c: [] for c in range(cfg.num_classes)}
    ground_truths = {c: {} for c in range(cfg.num_classes)}
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        rgb, depth, annotations = _batched(chunk, cfg.input_size)
        per_image = model.predict(Tensor(rgb), depth,
                                  confidence_threshold=confidence_threshold)
        for offset, (dets, anns) in enumerate(zip(per_image, annotations)):
            image_id = start + offset
            for c in range(cfg.num_classes):
                ground_truths[c][image_id] = [
                    (cx, cy, w, h) for cid, cx, cy, w, h in anns if cid == c]
            for d in dets:
                detections[d.class_id].append((image_id, d.confidence, d.box))
    model.train(was_training)
    per_class_inputs = {c: (detections[c], ground_truths[c]) for c in range(cfg.num_classes)}
    mean, aps = mean_average_precision(per_class_inputs, iou_threshold)
    curves = {}
    for c, (dets, gts) in per_class_inputs.items():
        if c in aps:
            _, recalls, precisions = average_precision(dets, gts, iou_threshold)
            curves[c] = (recalls, precisions)
    return EvalResult(mean_ap=mean, per_class=aps, pr_curves=curves,
                      num_images=len(samples))


def write_loss_csv(path, losses):
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for i, value in enumerate(losses):
            writer.writerow([i, f"{value:.10f}"])
