"""Position-adaptive involution operators and their kernel-generating network.

The hyper-network turns each input position into its own spatial kernel, so
the parameter count is independent of kernel size: three pointwise layers
(8, 8 and 6 filters) squeeze the input pixel into a 6-channel embedding and
a single pointwise filter expands it to kernel values. Two expansion modes
are provided:

* ``broadcast``: the single output value is replicated across all F x F
  kernel positions (the kernel is spatially flat per position).
* ``coordinate`` (default): the 6-channel embedding is modulated elementwise
  by a fixed sinusoidal encoding of the kernel offset before the final
  filter, so each offset receives a distinct value at identical parameter
  cost.

``involution_apply`` then slides the generated kernels over the input,
optionally scaled per neighbor by a depth-similarity weight field. With a
constant depth map every weight is exactly 1.0 and the depth-aware result
is bit-identical to the plain hyper-involution.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .depth_weighting import WeightingKind, weight_field_batch
from .nn import BatchNorm2d, Conv2d, Module
from .tensor import Tensor, _accumulate, _make

GENERATOR_MODES = ("coordinate", "broadcast")


def _offset_encodings(kernel_size: int) -> np.ndarray:
    """Fixed 6-dim sinusoidal code per kernel offset, row-major, shape (F*F, 6)."""
    r = kernel_size // 2
    span = float(max(r, 1))
    rows = []
    for m in range(-r, r + 1):
        for n in range(-r, r + 1):
            u, v = m / span, n / span
            rows.append([
                np.sin(np.pi * u / 2.0), np.cos(np.pi * u / 2.0),
                np.sin(np.pi * v / 2.0), np.cos(np.pi * v / 2.0),
                np.sin(np.pi * (u + v) / 3.0), np.cos(np.pi * (u - v) / 3.0),
            ])
    return np.asarray(rows)


class HyperNetwork(Module):
    """Per-position kernel generator; parameter count does not depend on F."""

    def __init__(self, in_channels: int, kernel_size: int, mode: str = "coordinate",
                 rng: np.random.Generator | None = None):
        super().__init__()
        if kernel_size < 1 or kernel_size % 2 == 0:
            raise ValueError(f"kernel size must be odd and positive, got {kernel_size}")
        if mode not in GENERATOR_MODES:
            raise ValueError(f"unknown generator mode {mode!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels = in_channels
        self.kernel_size = kernel_size
        self.mode = mode
        self.embed1 = Conv2d(in_channels, 8, 1, rng)
        self.norm1 = BatchNorm2d(8)
        self.embed2 = Conv2d(8, 8, 1, rng)
        self.norm2 = BatchNorm2d(8)
        self.embed3 = Conv2d(8, 6, 1, rng)
        self.head = Conv2d(6, 1, 1, rng)
        self.encodings = _offset_encodings(kernel_size)

    def generate(self, x: Tensor) -> Tensor:
        """Kernels for every position of ``x``, shape (B, H, W, F, F, 1).

        The trailing group axis is 1: one generated kernel is shared by all
        channel groups of the operator it feeds.
        """
        if x.data.ndim != 4 or x.data.shape[3] != self.in_channels:
            raise ValueError(
                f"expected input (B,H,W,{self.in_channels}), got {x.data.shape}")
        b, h, w, _ = x.data.shape
        f = self.kernel_size
        z = T.leaky_relu(self.norm1(self.embed1(x)))
        z = T.leaky_relu(self.norm2(self.embed2(z)))
        z = self.embed3(z)
        if self.mode == "broadcast":
            flat = self.head(z)                                  # (B,H,W,1)
            k = T.tile(T.reshape(flat, (b, h, w, 1, 1, 1)), (1, 1, 1, f, f, 1))
            return k
        # the head is pointwise, so modulating the embedding by each offset
        # code and applying it is one broadcast multiply + reduction over
        # the embedding axis rather than F*F separate convolutions
        z6 = T.reshape(z, (b, h, w, 1, 6))
        head_w = T.reshape(self.head.weight, (1, 6))
        k = (z6 * Tensor(self.encodings) * head_w).sum(axis=-1) + self.head.bias
        return T.reshape(k, (b, h, w, f, f, 1))


def generate_kernels(net: HyperNetwork, x: Tensor) -> Tensor:
    return net.generate(x)


class InvolutionGenerator(Module):
    """Two pointwise transforms mapping each pixel to its own F x F kernel.

    The first transform mixes channels without bias; the second expands to
    F*F*G kernel values with bias, so the count grows affinely in F^2.
    """

    def __init__(self, channels: int, kernel_size: int, groups: int = 1,
                 rng: np.random.Generator | None = None):
        super().__init__()
        if kernel_size < 1 or kernel_size % 2 == 0:
            raise ValueError(f"kernel size must be odd and positive, got {kernel_size}")
        if channels % groups != 0:
            raise ValueError(f"groups {groups} must divide channels {channels}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        self.kernel_size = kernel_size
        self.groups = groups
        self.reduce = Conv2d(channels, channels, 1, rng, bias=False)
        self.expand = Conv2d(channels, kernel_size * kernel_size * groups, 1, rng)

    def generate(self, x: Tensor) -> Tensor:
        b, h, w, _ = x.data.shape
        f = self.kernel_size
        k = self.expand(T.leaky_relu(self.reduce(x)))
        return T.reshape(k, (b, h, w, f, f, self.groups))


def involution_apply(x: Tensor, kernels: Tensor, depth_weights: np.ndarray | None = None,
                     groups: int | None = None) -> Tensor:
    """Apply per-position kernels: out[b,i,j,k] = sum_mn K[b,i,j,m,n,g(k)] *
    W[b,i,j,m,n] * x[b,i+m-r,j+n-r,k], zero-padded at the borders.

    ``kernels`` has shape (B,H,W,F,F,Gk) with Gk either the group count or 1
    (one kernel broadcast across groups). ``depth_weights`` is a constant
    (B,H,W,F,F) array; it carries no parameters and receives no gradient.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    kernels = kernels if isinstance(kernels, Tensor) else Tensor(kernels)
    if x.data.ndim != 4:
        raise ValueError(f"input must be rank 4, got rank {x.data.ndim}")
    if kernels.data.ndim != 6:
        raise ValueError("kernels must have shape (B,H,W,F,F,G)")
    b, h, w, c = x.data.shape
    kb, kh, kw, f, f2, gk = kernels.data.shape
    if (kb, kh, kw) != (b, h, w):
        raise ValueError(f"kernel field extents {(kb, kh, kw)} do not match input {(b, h, w)}")
    if f != f2 or f % 2 == 0:
        raise ValueError(f"kernels must be square with odd extent, got {(f, f2)}")
    groups = gk if groups is None else groups
    if c % groups != 0:
        raise ValueError(f"groups {groups} must divide channels {c}")
    if gk not in (1, groups):
        raise ValueError(f"kernel group axis {gk} incompatible with groups {groups}")
    dw = None
    if depth_weights is not None:
        dw = depth_weights.data if isinstance(depth_weights, Tensor) else np.asarray(depth_weights)
        if dw.shape != (b, h, w, f, f):
            raise ValueError(f"depth weights must have shape {(b, h, w, f, f)}, got {dw.shape}")

    r = f // 2
    kd = kernels.data
    gidx = (np.arange(c) * groups) // c
    xp = np.pad(x.data, ((0, 0), (r, r), (r, r), (0, 0)))

    def channel_kernel(m, n):
        k_mn = kd[:, :, :, m, n, :]
        kk = k_mn if gk == 1 else k_mn[:, :, :, gidx]
        if dw is not None:
            kk = kk * dw[:, :, :, m, n][..., None]
        return kk

    out = np.zeros((b, h, w, c))
    for m in range(f):
        for n in range(f):
            out += channel_kernel(m, n) * xp[:, m : m + h, n : n + w, :]

    def backward_fn(g):
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for m in range(f):
                for n in range(f):
                    gxp[:, m : m + h, n : n + w, :] += g * channel_kernel(m, n)
            _accumulate(x, gxp[:, r : r + h, r : r + w, :])
        if kernels.requires_grad:
            gkd = np.zeros_like(kd)
            for m in range(f):
                for n in range(f):
                    t = g * xp[:, m : m + h, n : n + w, :]
                    if dw is not None:
                        t = t * dw[:, :, :, m, n][..., None]
                    if gk == 1:
                        gkd[:, :, :, m, n, 0] = t.sum(axis=3)
                    else:
                        gkd[:, :, :, m, n, :] = t.reshape(b, h, w, gk, c // gk).sum(axis=4)
            _accumulate(kernels, gkd)

    return _make(out, (x, kernels), backward_fn)


def involution_forward(x: Tensor, kernels: Tensor, groups: int | None = None) -> Tensor:
    """Plain involution: per-position kernels, no depth weighting."""
    return involution_apply(x, kernels, None, groups)


def hyper_involution_forward(x: Tensor, net: HyperNetwork, kernel_size: int | None = None,
                             groups: int = 1) -> Tensor:
    """Involution whose kernels come from ``net``; all neighbor weights are 1."""
    if kernel_size is not None and kernel_size != net.kernel_size:
        raise ValueError(f"kernel size {kernel_size} != generator's {net.kernel_size}")
    b, h, w, _ = x.data.shape
    ones = np.ones((b, h, w, net.kernel_size, net.kernel_size))
    return involution_apply(x, net.generate(x), ones, groups)


def depth_aware_hyper_involution_forward(x: Tensor, depth: np.ndarray, net: HyperNetwork,
                                         kind: WeightingKind, kernel_size: int | None = None,
                                         groups: int = 1) -> Tensor:
    """Hyper-involution with neighbor contributions scaled by depth similarity."""
    if kernel_size is not None and kernel_size != net.kernel_size:
        raise ValueError(f"kernel size {kernel_size} != generator's {net.kernel_size}")
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim == 2:
        depth = depth[None]
    b, h, w, _ = x.data.shape
    if depth.shape != (b, h, w):
        raise ValueError(f"depth extents {depth.shape} do not match input {(b, h, w)}")
    field = weight_field_batch(depth, net.kernel_size, kind)
    return involution_apply(x, net.generate(x), field, groups)


def count_params(operator: str, kernel_size: int, in_channels: int = 3, filters: int = 8,
                 groups: int = 1, mode: str = "coordinate") -> int:
    """Trainable scalar count for one operator configuration.

    The convolution row counts a bias-free (filters, in_channels, F, F)
    kernel, the comparison convention used by the involution literature.
    """
    rng = np.random.default_rng(0)
    if operator == "conv":
        module = Conv2d(in_channels, filters, kernel_size, rng, bias=False)
    elif operator == "involution":
        module = InvolutionGenerator(in_channels, kernel_size, groups, rng)
    elif operator in ("hyper-involution", "depth-aware-hyper-involution"):
        module = HyperNetwork(in_channels, kernel_size, mode, rng)
    else:
        raise ValueError(f"unknown operator {operator!r}")
    return sum(p.data.size for p in module.parameters())
