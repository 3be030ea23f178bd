"""Dense float64 tensors with reverse-mode automatic differentiation.

Rank-4 feature tensors use (batch, height, width, channel) layout. Every
differentiable op records parents and a backward closure; the creation
sequence number doubles as a tape, so ``backward`` replays records in exact
reverse execution order and accumulates gradients additively. All math is
float64 and single-threaded numpy, so forward results are bit-identical
for identical inputs.
"""

from __future__ import annotations

import itertools

import numpy as np

_SEQ = itertools.count()


class Tensor:
    """A numpy array plus an optional gradient and tape record."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._seq = next(_SEQ)

    # ------------------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _fail_item(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic ----------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _fail_item(t):
    raise ValueError(f"item() requires a single-element tensor, got shape {t.data.shape}")


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _make(data, parents, backward_fn) -> Tensor:
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def backward(loss: Tensor):
    """Populate ``grad`` on every tensor that participated in ``loss``.

    Records are replayed strictly in reverse creation order, which is the
    reverse of execution order, so a tensor's gradient is complete before
    its own backward closure runs. Gradients accumulate additively across
    multiple uses of the same tensor.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    nodes = []
    seen = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t._backward is not None:
            nodes.append(t)
            stack.extend(t._parents)
    nodes.sort(key=lambda t: t._seq, reverse=True)
    loss.grad = np.ones_like(loss.data)
    for node in nodes:
        if node.grad is not None:
            node._backward(node.grad)


# ----------------------------------------------------------------------
# broadcasting arithmetic
# ----------------------------------------------------------------------

def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` back down to ``shape`` after numpy broadcasting."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data + b.data

    def backward_fn(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data - b.data

    def backward_fn(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data * b.data

    def backward_fn(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward_fn)


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data / b.data

    def backward_fn(g):
        _accumulate(a, _unbroadcast(g / b.data, a.data.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(data, (a, b), backward_fn)


def neg(a: Tensor) -> Tensor:
    def backward_fn(g):
        _accumulate(a, -g)

    return _make(-a.data, (a,), backward_fn)


def power(a: Tensor, p: float) -> Tensor:
    p = float(p)
    data = a.data ** p

    def backward_fn(g):
        _accumulate(a, g * p * a.data ** (p - 1.0))

    return _make(data, (a,), backward_fn)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def backward_fn(g):
        _accumulate(a, g * data)

    return _make(data, (a,), backward_fn)


def sqrt(a: Tensor) -> Tensor:
    data = np.sqrt(a.data)

    def backward_fn(g):
        _accumulate(a, g * 0.5 / data)

    return _make(data, (a,), backward_fn)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    data = np.clip(a.data, lo, hi)

    def backward_fn(g):
        _accumulate(a, g * ((a.data >= lo) & (a.data <= hi)))

    return _make(data, (a,), backward_fn)


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward_fn(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape).copy())
            return
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, tuple(ax % a.data.ndim for ax in axes))
        _accumulate(a, np.broadcast_to(g, a.data.shape).copy())

    return _make(data, (a,), backward_fn)


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / float(n))


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    data = a.data.reshape(shape)

    def backward_fn(g):
        _accumulate(a, g.reshape(a.data.shape))

    return _make(data, (a,), backward_fn)


def getitem(a: Tensor, idx) -> Tensor:
    data = a.data[idx]

    def backward_fn(g):
        buf = np.zeros_like(a.data)
        buf[idx] += g
        _accumulate(a, buf)

    return _make(data, (a,), backward_fn)


def concat(tensors, axis: int) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward_fn(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accumulate(t, piece)

    return _make(data, tuple(tensors), backward_fn)


def tile(a: Tensor, reps) -> Tensor:
    reps = tuple(int(r) for r in reps)
    if len(reps) != a.data.ndim:
        raise ValueError("tile reps must list one repeat per axis")
    data = np.tile(a.data, reps)

    def backward_fn(g):
        interleaved = []
        for r, s in zip(reps, a.data.shape):
            interleaved.extend((r, s))
        _accumulate(a, g.reshape(interleaved).sum(axis=tuple(range(0, 2 * len(reps), 2))))

    return _make(data, (a,), backward_fn)


# ----------------------------------------------------------------------
# activations
# ----------------------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)

    def backward_fn(g):
        _accumulate(a, g * (a.data > 0.0))

    return _make(data, (a,), backward_fn)


def leaky_relu(a: Tensor, slope: float = 0.1) -> Tensor:
    # the subgradient at exactly 0 is taken from the negative branch
    data = np.where(a.data > 0.0, a.data, slope * a.data)

    def backward_fn(g):
        _accumulate(a, g * np.where(a.data > 0.0, 1.0, slope))

    return _make(data, (a,), backward_fn)


def sigmoid(a: Tensor) -> Tensor:
    data = 1.0 / (1.0 + np.exp(-a.data))

    def backward_fn(g):
        _accumulate(a, g * data * (1.0 - data))

    return _make(data, (a,), backward_fn)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        _accumulate(a, data * (g - dot))

    return _make(data, (a,), backward_fn)


# ----------------------------------------------------------------------
# spatial ops, (batch, height, width, channel) layout
# ----------------------------------------------------------------------

def _pad_amounts(size: int, f: int, stride: int, padding: str):
    """Return (lo, hi, out_size); 'same' puts the extra pad on the high side."""
    if padding == "valid":
        return 0, 0, (size - f) // stride + 1
    out = -(-size // stride)
    total = max((out - 1) * stride + f - size, 0)
    lo = total // 2
    return lo, total - lo, out


def _check_conv_args(x, w, stride, padding):
    if x.ndim != 4:
        raise ValueError(f"conv input must be rank 4, got rank {x.ndim}")
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ValueError("conv weights must have shape (out_ch, in_ch, F, F)")
    if padding not in ("same", "valid"):
        raise ValueError(f"unknown padding {padding!r}")
    if stride < 1:
        raise ValueError("stride must be >= 1")


def _conv_core(x: np.ndarray, w: np.ndarray, stride: int, padding: str) -> np.ndarray:
    B, H, W, Ci = x.shape
    Co, _, F, _ = w.shape
    pt, pb, oh = _pad_amounts(H, F, stride, padding)
    pl, pr, ow = _pad_amounts(W, F, stride, padding)
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0))) if pt or pb or pl or pr else x
    out = np.zeros((B, oh, ow, Co))
    for m in range(F):
        for n in range(F):
            win = xp[:, m : m + (oh - 1) * stride + 1 : stride,
                     n : n + (ow - 1) * stride + 1 : stride, :]
            out += np.tensordot(win, w[:, :, m, n], axes=([3], [1]))
    return out


def _conv_input_grad(g: np.ndarray, w: np.ndarray, in_hw, stride: int, padding: str) -> np.ndarray:
    B, oh, ow, Co = g.shape
    _, Ci, F, _ = w.shape
    H, W = in_hw
    pt, pb, oh2 = _pad_amounts(H, F, stride, padding)
    pl, pr, ow2 = _pad_amounts(W, F, stride, padding)
    if (oh, ow) != (oh2, ow2):
        raise ValueError(f"gradient extents {(oh, ow)} do not match conv output {(oh2, ow2)}")
    gxp = np.zeros((B, H + pt + pb, W + pl + pr, Ci))
    for m in range(F):
        for n in range(F):
            gxp[:, m : m + (oh - 1) * stride + 1 : stride,
                n : n + (ow - 1) * stride + 1 : stride, :] += np.tensordot(
                g, w[:, :, m, n], axes=([3], [0]))
    return gxp[:, pt : pt + H, pl : pl + W, :]


def _conv_weight_grad(g: np.ndarray, x: np.ndarray, F: int, stride: int, padding: str) -> np.ndarray:
    B, H, W, Ci = x.shape
    _, oh, ow, Co = g.shape
    pt, pb, _ = _pad_amounts(H, F, stride, padding)
    pl, pr, _ = _pad_amounts(W, F, stride, padding)
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0))) if pt or pb or pl or pr else x
    dw = np.zeros((Co, Ci, F, F))
    for m in range(F):
        for n in range(F):
            win = xp[:, m : m + (oh - 1) * stride + 1 : stride,
                     n : n + (ow - 1) * stride + 1 : stride, :]
            dw[:, :, m, n] = np.tensordot(g, win, axes=([0, 1, 2], [0, 1, 2]))
    return dw


def conv2d(x: Tensor, weights: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: str = "same") -> Tensor:
    """Cross-correlation of ``x`` (B,H,W,Ci) with ``weights`` (Co,Ci,F,F)."""
    x, weights = _wrap(x), _wrap(weights)
    _check_conv_args(x.data, weights.data, stride, padding)
    F = weights.data.shape[2]
    if F % 2 == 0:
        raise ValueError(f"conv kernel size must be odd, got {F}")
    if weights.data.shape[1] != x.data.shape[3]:
        raise ValueError(
            f"weight in-channels {weights.data.shape[1]} != input channels {x.data.shape[3]}")
    data = _conv_core(x.data, weights.data, stride, padding)
    parents = [x, weights]
    if bias is not None:
        bias = _wrap(bias)
        if bias.data.shape != (weights.data.shape[0],):
            raise ValueError("bias must have one entry per output channel")
        data = data + bias.data
        parents.append(bias)
    in_hw = (x.data.shape[1], x.data.shape[2])

    def backward_fn(g):
        if x.requires_grad:
            _accumulate(x, _conv_input_grad(g, weights.data, in_hw, stride, padding))
        if weights.requires_grad:
            _accumulate(weights, _conv_weight_grad(g, x.data, F, stride, padding))
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.sum(axis=(0, 1, 2)))

    return _make(data, parents, backward_fn)


def transposed_conv2d(x: Tensor, weights: Tensor, stride: int = 1,
                      out_hw: tuple[int, int] | None = None) -> Tensor:
    """Exact adjoint of a same-padded strided conv with the same ``weights``.

    ``x`` (B,h,w,Co) is mapped to (B, h*stride, w*stride, Ci) by default;
    ``out_hw`` may pick any extents whose same-padded stride-``stride``
    conv output is (h, w). The gradient with respect to ``x`` is therefore
    the forward conv with the same kernel.
    """
    x, weights = _wrap(x), _wrap(weights)
    _check_conv_args(x.data, weights.data, stride, "same")
    if weights.data.shape[0] != x.data.shape[3]:
        raise ValueError(
            f"weight leading channels {weights.data.shape[0]} != input channels {x.data.shape[3]}")
    B, h, w, _ = x.data.shape
    F = weights.data.shape[2]
    if out_hw is None:
        out_hw = (h * stride, w * stride)
    H, W = out_hw
    if -(-H // stride) != h or -(-W // stride) != w:
        raise ValueError(f"output extents {out_hw} are not reachable from input {(h, w)} at stride {stride}")
    data = _conv_input_grad(x.data, weights.data, (H, W), stride, "same")

    def backward_fn(g):
        if x.requires_grad:
            _accumulate(x, _conv_core(g, weights.data, stride, "same"))
        if weights.requires_grad:
            _accumulate(weights, _conv_weight_grad(x.data, g, F, stride, "same"))

    return _make(data, (x, weights), backward_fn)


def maxpool2d(x: Tensor, window: int, stride: int) -> Tensor:
    """Max pooling; ties resolve to the first occurrence in row-major window order."""
    x = _wrap(x)
    B, H, W, C = x.data.shape
    if window > H or window > W:
        raise ValueError(f"pool window {window} exceeds spatial extents {(H, W)}")
    oh = (H - window) // stride + 1
    ow = (W - window) // stride + 1
    slices = [
        x.data[:, m : m + (oh - 1) * stride + 1 : stride,
               n : n + (ow - 1) * stride + 1 : stride, :]
        for m in range(window) for n in range(window)
    ]
    patches = np.stack(slices, axis=3)          # (B, oh, ow, window*window, C)
    arg = patches.argmax(axis=3)
    data = np.take_along_axis(patches, arg[:, :, :, None, :], axis=3)[:, :, :, 0, :]

    def backward_fn(g):
        gx = np.zeros_like(x.data)
        for k in range(window * window):
            m, n = divmod(k, window)
            sel = (arg == k) * g
            gx[:, m : m + (oh - 1) * stride + 1 : stride,
               n : n + (ow - 1) * stride + 1 : stride, :] += sel
        _accumulate(x, gx)

    return _make(data, (x,), backward_fn)


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    x = _wrap(x)
    if factor < 1:
        raise ValueError("upsample factor must be >= 1")
    B, H, W, C = x.data.shape
    data = np.repeat(np.repeat(x.data, factor, axis=1), factor, axis=2)

    def backward_fn(g):
        _accumulate(x, g.reshape(B, H, factor, W, factor, C).sum(axis=(2, 4)))

    return _make(data, (x,), backward_fn)


class BatchNormState:
    """Mutable running statistics for inference-mode batchnorm."""

    def __init__(self, channels: int, momentum: float = 0.9):
        self.mean = np.zeros(channels)
        self.var = np.ones(channels)
        self.momentum = float(momentum)


def batchnorm(x: Tensor, scale: Tensor, shift: Tensor, eps: float = 1e-5,
              mode: str = "train", state: BatchNormState | None = None) -> Tensor:
    """Per-channel batch normalization over the (batch, height, width) axes.

    In train mode statistics come from the batch (and update ``state`` with
    momentum 0.9 when given); in eval mode they come from ``state``.
    """
    x, scale, shift = _wrap(x), _wrap(scale), _wrap(shift)
    if x.data.ndim != 4:
        raise ValueError("batchnorm expects a rank-4 input")
    B, H, W, C = x.data.shape
    n = B * H * W
    if n == 0:
        raise ValueError("batchnorm over an empty batch is undefined")
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown batchnorm mode {mode!r}")

    if mode == "eval":
        if state is None:
            raise ValueError("eval-mode batchnorm requires running statistics")
        inv = 1.0 / np.sqrt(state.var + eps)
        xhat = (x.data - state.mean) * inv
        data = xhat * scale.data + shift.data

        def backward_eval(g):
            _accumulate(x, g * scale.data * inv)
            _accumulate(scale, (g * xhat).sum(axis=(0, 1, 2)))
            _accumulate(shift, g.sum(axis=(0, 1, 2)))

        return _make(data, (x, scale, shift), backward_eval)

    mu = x.data.mean(axis=(0, 1, 2))
    centered = x.data - mu
    var = (centered * centered).mean(axis=(0, 1, 2))
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    data = xhat * scale.data + shift.data
    if state is not None:
        m = state.momentum
        state.mean[...] = m * state.mean + (1.0 - m) * mu
        state.var[...] = m * state.var + (1.0 - m) * var

    def backward_train(g):
        gxhat = g * scale.data
        if x.requires_grad:
            dvar = (gxhat * centered).sum(axis=(0, 1, 2)) * (-0.5) * inv ** 3
            dmu = -(gxhat.sum(axis=(0, 1, 2))) * inv + dvar * (-2.0) * centered.mean(axis=(0, 1, 2))
            _accumulate(x, gxhat * inv + dvar * 2.0 * centered / n + dmu / n)
        _accumulate(scale, (g * xhat).sum(axis=(0, 1, 2)))
        _accumulate(shift, g.sum(axis=(0, 1, 2)))

    return _make(data, (x, scale, shift), backward_train)
