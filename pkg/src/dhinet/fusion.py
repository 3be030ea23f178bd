"""Encoder-decoder fusion of the RGB and depth feature streams.

The depth features pass through a residual map (one 3x3 convolution plus
activation added back onto its input) and are summed with the RGB features.
The sum is upsampled, encoded by a stride-2 convolution back to its original
extents, squeezed once more by a stride-2 bottleneck, and restored by a
stride-2 transposed convolution; the encoder output is finally added into
the decoder output as a skip. The bottleneck keeps the stage shape-preserving
for any input extents: without it the stride-2 decoder would end up at twice
the input resolution.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import Conv2d, Module, TransposedConv2d
from .tensor import Tensor


class FusionStage(Module):
    def __init__(self, channels: int = 3, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        self.residual = Conv2d(channels, channels, 3, rng)
        self.encoder = Conv2d(channels, channels, 3, rng, stride=2)
        self.bottleneck = Conv2d(channels, channels, 3, rng, stride=2)
        self.decoder = TransposedConv2d(channels, channels, 3, rng, stride=2)

    def residual_map(self, depth_features: Tensor) -> Tensor:
        """x + act(conv(x)); with zero weights this is the identity."""
        return depth_features + T.leaky_relu(self.residual(depth_features))

    def __call__(self, rgb_features: Tensor, depth_features: Tensor) -> Tensor:
        if rgb_features.data.shape != depth_features.data.shape:
            raise ValueError(
                f"stream shapes differ: {rgb_features.data.shape} vs {depth_features.data.shape}")
        if rgb_features.data.shape[3] != self.channels:
            raise ValueError(
                f"expected {self.channels} channels, got {rgb_features.data.shape[3]}")
        s = rgb_features + self.residual_map(depth_features)
        u = T.upsample_nearest(s, 2)
        e = T.leaky_relu(self.encoder(u))          # back at the extents of s
        squeezed = T.leaky_relu(self.bottleneck(e))
        d = self.decoder(squeezed, out_hw=(e.data.shape[1], e.data.shape[2]))
        return d + e
