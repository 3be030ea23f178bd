"""Radial depth-similarity weights and per-position weight fields.

A weight compares the depth at a kernel center with the depth at one of its
neighbors and shrinks the neighbor's contribution as the depth difference
grows. Four families are supported; the inverse multiquadric and Gaussian
apply a sharpness factor gamma to the difference, while the triangular and
Wendland forms consume the raw difference.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class WeightingFunction(enum.Enum):
    INVERSE_MULTIQUADRIC = "inverse-multiquadric"
    GAUSSIAN = "gaussian"
    TRIANGULAR = "triangular"
    WENDLAND_C2 = "wendland-c2"
    # literal transcription variant of the Wendland polynomial; see weight_values
    WENDLAND_C2_LITERAL = "wendland-c2-literal"


_GAMMA_KINDS = {WeightingFunction.INVERSE_MULTIQUADRIC, WeightingFunction.GAUSSIAN}


@dataclass(frozen=True)
class WeightingKind:
    function: WeightingFunction = WeightingFunction.INVERSE_MULTIQUADRIC
    gamma: float = 9.5

    def __post_init__(self):
        if self.function in _GAMMA_KINDS and not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    @classmethod
    def parse(cls, name: str, gamma: float = 9.5) -> "WeightingKind":
        return cls(WeightingFunction(name), gamma)


@dataclass(frozen=True)
class DepthMap:
    """A single-view depth image, metric units, finite and non-negative."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"depth map must be rank 2, got rank {v.ndim}")
        if not np.all(np.isfinite(v)):
            raise ValueError("depth map contains non-finite values")
        if np.any(v < 0):
            raise ValueError("depth map contains negative values")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def weight_values(kind: WeightingKind, delta: np.ndarray) -> np.ndarray:
    """Vectorized weight for an array of center-minus-neighbor differences."""
    delta = np.asarray(delta, dtype=np.float64)
    fn = kind.function
    if fn is WeightingFunction.INVERSE_MULTIQUADRIC:
        return 1.0 / np.sqrt(1.0 + (kind.gamma * delta) ** 2)
    if fn is WeightingFunction.GAUSSIAN:
        return np.exp(-((kind.gamma * np.abs(delta)) ** 2))
    if fn is WeightingFunction.TRIANGULAR:
        return np.maximum(1.0 - np.abs(delta), 0.0)
    if fn is WeightingFunction.WENDLAND_C2:
        r = np.minimum(np.abs(delta), 1.0)
        return (1.0 - r) ** 4 * (4.0 * r + 1.0)
    # literal polynomial as printed: (1 - delta^4) + (4*delta + 1)
    return (1.0 - delta ** 4) + (4.0 * delta + 1.0)


def weight(kind: WeightingKind, center_depth: float, neighbor_depth: float) -> float:
    """Scalar weight for one center/neighbor depth pair."""
    pair = np.array([center_depth, neighbor_depth], dtype=np.float64)
    if not np.all(np.isfinite(pair)):
        raise ValueError("depth values must be finite")
    return float(weight_values(kind, pair[0] - pair[1]))


def _field_stack(depth: np.ndarray, kernel_size: int, kind: WeightingKind) -> np.ndarray:
    """Weight field for a batch of depth maps, shape (B, H, W, F, F).

    Neighbors outside the image contribute weight exactly 1, so border
    positions degrade toward an unweighted kernel rather than toward zero.
    """
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ValueError(f"kernel size must be odd and positive, got {kernel_size}")
    b, h, w = depth.shape
    r = kernel_size // 2
    padded = np.pad(depth, ((0, 0), (r, r), (r, r)), constant_values=np.nan)
    field = np.empty((b, h, w, kernel_size, kernel_size))
    for m in range(kernel_size):
        for n in range(kernel_size):
            neighbor = padded[:, m : m + h, n : n + w]
            inside = np.isfinite(neighbor)
            delta = depth - np.where(inside, neighbor, depth)
            field[:, :, :, m, n] = np.where(inside, weight_values(kind, delta), 1.0)
    return field


def weight_field(depth: DepthMap, kernel_size: int, kind: WeightingKind) -> np.ndarray:
    """Per-position kernel weights, shape (H, W, F, F)."""
    return _field_stack(depth.values[None], kernel_size, kind)[0]


def weight_field_batch(depth: np.ndarray, kernel_size: int, kind: WeightingKind) -> np.ndarray:
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 3:
        raise ValueError("batched depth must have shape (B, H, W)")
    if not np.all(np.isfinite(depth)):
        raise ValueError("depth values must be finite")
    return _field_stack(depth, kernel_size, kind)
