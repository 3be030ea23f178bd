"""Two-stream RGB-D detector.

The RGB stream applies a depth-aware hyper-involution, the depth stream a
plain hyper-involution on the depth map tiled to three channels (so both
kernel generators see the same channel count); each stream pools once. The
fused features feed a 13-layer 3x3 backbone with four interleaved pools, so
the overall downsampling factor is 32 and a 416 input yields a 13x13 grid.
A pointwise head emits, per cell and anchor, box offsets, objectness and
class scores.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .depth_weighting import WeightingFunction, WeightingKind
from .fusion import FusionStage
from .loss import decode_head
from .metrics import iou
from .nn import BatchNorm2d, Conv2d, Module
from .operators import (HyperNetwork, depth_aware_hyper_involution_forward,
                        hyper_involution_forward)
from .tensor import Tensor

DEFAULT_CHANNELS = (64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512)
POOL_AFTER = (2, 4, 7, 10)  # backbone pools; the streams contribute the fifth halving
DEFAULT_ANCHORS = ((0.102, 0.133), (0.246, 0.308), (0.389, 0.623),
                   (0.729, 0.372), (0.864, 0.770))


@dataclass(frozen=True)
class ModelConfig:
    input_size: int = 416
    kernel_size: int = 3
    groups: int = 1
    weighting: str = "inverse-multiquadric"
    gamma: float = 9.5
    generator_mode: str = "coordinate"
    channels: tuple = DEFAULT_CHANNELS
    anchors: tuple = DEFAULT_ANCHORS
    num_classes: int = 3
    fusion_channels: int = 3
    nms_iou: float = 0.5

    def __post_init__(self):
        if len(self.channels) != 13:
            raise ValueError(f"backbone needs exactly 13 conv layers, got {len(self.channels)}")
        if self.input_size < 32:
            raise ValueError(f"input size must be at least 32, got {self.input_size}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {self.kernel_size}")
        if self.num_classes < 1:
            raise ValueError("at least one class is required")
        if not self.anchors:
            raise ValueError("anchor list must not be empty")
        if not 0.0 < self.nms_iou < 1.0:
            raise ValueError(f"nms iou must lie in (0, 1), got {self.nms_iou}")
        WeightingKind.parse(self.weighting, self.gamma)  # validates both

    @property
    def grid_size(self) -> int:
        return self.input_size // 32

    @property
    def num_anchors(self) -> int:
        return len(self.anchors)

    @property
    def weighting_kind(self) -> WeightingKind:
        return WeightingKind.parse(self.weighting, self.gamma)


_LIST_FIELDS = {"channels", "anchors"}
_INT_FIELDS = {"input_size", "kernel_size", "groups", "num_classes", "fusion_channels"}
_FLOAT_FIELDS = {"gamma", "nms_iou"}


def config_to_text(cfg: ModelConfig) -> str:
    lines = []
    for name in ModelConfig.__dataclass_fields__:
        value = getattr(cfg, name)
        if name == "anchors":
            value = ",".join(f"{w:.10g}:{h:.10g}" for w, h in value)
        elif name == "channels":
            value = ",".join(str(c) for c in value)
        lines.append(f"{name}={value}")
    return "\n".join(lines) + "\n"


def apply_config_pairs(cfg: ModelConfig, pairs: dict[str, str]) -> ModelConfig:
    updates = {}
    for key, value in pairs.items():
        if key not in ModelConfig.__dataclass_fields__:
            raise ValueError(f"unknown config key {key!r}")
        if key == "anchors":
            updates[key] = tuple(
                tuple(float(p) for p in item.split(":")) for item in value.split(",") if item)
        elif key == "channels":
            updates[key] = tuple(int(c) for c in value.split(",") if c)
        elif key in _INT_FIELDS:
            updates[key] = int(value)
        elif key in _FLOAT_FIELDS:
            updates[key] = float(value)
        else:
            updates[key] = value
    return replace(cfg, **updates)


def config_from_text(text: str, base: ModelConfig | None = None) -> ModelConfig:
    pairs = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"malformed config line {line!r}")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return apply_config_pairs(base if base is not None else ModelConfig(), pairs)


@dataclass(frozen=True)
class Detection:
    class_id: int
    confidence: float
    box: tuple  # (cx, cy, w, h), normalized


def nms(detections, iou_threshold: float):
    """Per-class greedy suppression; IoU strictly above the threshold drops a box.

    Output keeps the surviving detections ordered by confidence (ties by
    input position). Running the result through nms again is a no-op.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError(f"iou threshold must lie in (0, 1), got {iou_threshold}")
    detections = list(detections)
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].confidence, i))
    kept: list[Detection] = []
    suppressed = set()
    for i in order:
        if i in suppressed:
            continue
        kept.append(detections[i])
        for j in order:
            if j != i and j not in suppressed \
                    and detections[j].class_id == detections[i].class_id \
                    and iou(detections[j].box, detections[i].box) > iou_threshold:
                suppressed.add(j)
    return kept


def kmeans_anchors(boxes: np.ndarray, k: int, seed: int = 0, iterations: int = 100) -> np.ndarray:
    """Cluster (w, h) pairs under the 1 - IoU distance of origin-centered boxes.

    Deterministic for a given seed; returns centroids sorted by area.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 2)
    if len(boxes) < k:
        raise ValueError(f"need at least {k} boxes to build {k} anchors, got {len(boxes)}")
    if np.any(boxes <= 0):
        raise ValueError("anchor clustering requires positive extents")
    rng = np.random.default_rng(seed)
    centroids = boxes[rng.choice(len(boxes), size=k, replace=False)].copy()

    def distances(c):
        inter = np.minimum(boxes[:, None, 0], c[None, :, 0]) * \
            np.minimum(boxes[:, None, 1], c[None, :, 1])
        union = boxes[:, None, 0] * boxes[:, None, 1] + c[None, :, 0] * c[None, :, 1] - inter
        return 1.0 - inter / union

    labels = distances(centroids).argmin(axis=1)
    for _ in range(iterations):
        for ci in range(k):
            members = boxes[labels == ci]
            if len(members):
                centroids[ci] = members.mean(axis=0)
            else:  # reseed an empty cluster on the farthest box
                centroids[ci] = boxes[distances(centroids).min(axis=1).argmax()]
        new_labels = distances(centroids).argmin(axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return centroids[np.argsort(centroids[:, 0] * centroids[:, 1])]


class _Stream(Module):
    """Operator + norm + activation + one 2x2 pool."""

    def __init__(self, cfg: ModelConfig, depth_aware: bool, rng: np.random.Generator):
        super().__init__()
        self.depth_aware = depth_aware
        self.groups = cfg.groups
        self.kind = cfg.weighting_kind
        self.net = HyperNetwork(3, cfg.kernel_size, cfg.generator_mode, rng)
        self.norm = BatchNorm2d(3)

    def __call__(self, x: Tensor, depth: np.ndarray | None = None) -> Tensor:
        if self.depth_aware:
            y = depth_aware_hyper_involution_forward(x, depth, self.net, self.kind,
                                                     groups=self.groups)
        else:
            y = hyper_involution_forward(x, self.net, groups=self.groups)
        return T.maxpool2d(T.leaky_relu(self.norm(y)), 2, 2)


class Backbone(Module):
    def __init__(self, in_channels: int, channels, rng: np.random.Generator):
        super().__init__()
        prev = in_channels
        for i, ch in enumerate(channels, start=1):
            setattr(self, f"conv{i}", Conv2d(prev, ch, 3, rng))
            setattr(self, f"norm{i}", BatchNorm2d(ch))
            prev = ch
        self.depth_count = len(channels)

    def __call__(self, x: Tensor) -> Tensor:
        for i in range(1, self.depth_count + 1):
            x = T.leaky_relu(getattr(self, f"norm{i}")(getattr(self, f"conv{i}")(x)))
            if i in POOL_AFTER:
                x = T.maxpool2d(x, 2, 2)
        return x


class Detector(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | None = None):
        super().__init__()
        if cfg.fusion_channels != 3:
            raise ValueError("fusion width must match the 3-channel stream outputs")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        self.rgb_stream = _Stream(cfg, depth_aware=True, rng=rng)
        self.depth_stream = _Stream(cfg, depth_aware=False, rng=rng)
        self.fusion = FusionStage(cfg.fusion_channels, rng)
        self.backbone = Backbone(cfg.fusion_channels, cfg.channels, rng)
        out_ch = cfg.num_anchors * (5 + cfg.num_classes)
        self.head = Conv2d(cfg.channels[-1], out_ch, 1, rng)
        self.register_buffer("anchors", np.asarray(cfg.anchors, dtype=np.float64))

    def forward(self, rgb, depth) -> Tensor:
        rgb = rgb if isinstance(rgb, Tensor) else Tensor(rgb)
        depth = np.asarray(depth, dtype=np.float64)
        if rgb.data.ndim != 4 or rgb.data.shape[3] != 3:
            raise ValueError(f"rgb must be (B,H,W,3), got {rgb.data.shape}")
        if depth.shape != rgb.data.shape[:3]:
            raise ValueError(
                f"depth extents {depth.shape} do not match rgb {rgb.data.shape[:3]}")
        if rgb.data.shape[1] != self.cfg.input_size or rgb.data.shape[2] != self.cfg.input_size:
            raise ValueError(
                f"expected {self.cfg.input_size}x{self.cfg.input_size} input, "
                f"got {rgb.data.shape[1]}x{rgb.data.shape[2]}")
        tiled = Tensor(np.repeat(depth[..., None], 3, axis=3))
        rgb_features = self.rgb_stream(rgb, depth)
        depth_features = self.depth_stream(tiled)
        fused = self.fusion(rgb_features, depth_features)
        feats = self.backbone(fused)
        raw = self.head(feats)
        b, s, s2, _ = raw.data.shape
        if s != self.cfg.grid_size or s2 != self.cfg.grid_size:
            raise ValueError(f"head grid {s}x{s2} != configured {self.cfg.grid_size}")
        return T.reshape(raw, (b, s, s, self.cfg.num_anchors, 5 + self.cfg.num_classes))

    __call__ = forward

    def predict(self, rgb, depth, confidence_threshold: float = 0.05,
                nms_iou: float | None = None):
        """Decoded, suppressed detections per image, sorted by confidence."""
        raw = self.forward(rgb, depth)
        decoded = decode_head(raw, np.asarray(self.cfg.anchors))
        cx, cy = decoded["cx"].data, decoded["cy"].data
        w, h = decoded["w"].data, decoded["h"].data
        conf, probs = decoded["conf"].data, decoded["class_probs"].data
        cls = probs.argmax(axis=-1)
        score = conf * np.take_along_axis(probs, cls[..., None], axis=-1)[..., 0]
        results = []
        for bi in range(raw.data.shape[0]):
            dets = []
            flat = score[bi].reshape(-1)
            for idx in np.flatnonzero(flat >= confidence_threshold):
                i, j, ai = np.unravel_index(idx, score[bi].shape)
                dets.append(Detection(int(cls[bi, i, j, ai]), float(flat[idx]),
                                      (float(cx[bi, i, j, ai]), float(cy[bi, i, j, ai]),
                                       float(w[bi, i, j, ai]), float(h[bi, i, j, ai]))))
            results.append(nms(dets, self.cfg.nms_iou if nms_iou is None else nms_iou))
        return results
