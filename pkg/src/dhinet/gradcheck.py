"""Central finite-difference verification of every differentiable op.

Each case builds small random tensors, evaluates a scalar projection of the
op output, and compares analytic gradients against (f(x+h) - f(x-h)) / 2h at
h = 1e-5. The error metric is |analytic - numeric| / max(1, |analytic|,
|numeric|), required to stay at or below 1e-4. Random inputs are nudged away
from activation kinks so the difference quotient is valid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fusion as fusion_mod
from . import loss as loss_mod
from . import operators as ops
from . import tensor as T
from .depth_weighting import WeightingKind
from .nn import BatchNorm2d
from .tensor import Tensor, backward

STEP = 1e-5
TOLERANCE = 1e-4


def numeric_gradients(f, tensors, step: float = STEP):
    grads = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            hi = f().item()
            flat[i] = keep - step
            lo = f().item()
            flat[i] = keep
            gflat[i] = (hi - lo) / (2.0 * step)
        grads.append(g)
    return grads


def check_gradients(f, tensors, step: float = STEP, tol: float = TOLERANCE):
    """Returns (ok, worst_error) comparing backprop against central differences."""
    for t in tensors:
        t.grad = None
    out = f()
    backward(out)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    numeric = numeric_gradients(f, tensors, step)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
        worst = max(worst, float((np.abs(a - n) / denom).max()) if a.size else 0.0)
    return worst <= tol, worst


def _away_from_zero(values: np.ndarray, margin: float = 0.15) -> np.ndarray:
    return values + np.sign(values + 1e-12) * margin


def _projected(out: Tensor, rng: np.random.Generator) -> Tensor:
    return (out * Tensor(rng.normal(size=out.data.shape))).sum()


@dataclass
class CheckResult:
    name: str
    seed: int
    ok: bool
    error: float


def _case_arith(rng):
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(_away_from_zero(rng.normal(size=(1, 4))), requires_grad=True)
    proj = rng.normal(size=(3, 4))

    def f():
        return ((a + b) * (a - b) / b + (-a)) .sum() + ((a * 0.5 + 1.5) * Tensor(proj)).sum()

    return f, [a, b]


def _case_power_exp_sqrt(rng):
    a = Tensor(rng.uniform(0.3, 2.0, size=(3, 3)), requires_grad=True)

    def f():
        return (a ** 3.0).sum() + T.exp(a * 0.3).sum() + T.sqrt(a).sum()

    return f, [a]


def _case_clip(rng):
    vals = rng.uniform(-2.0, 2.0, size=(4, 4))
    near_edge = np.abs(np.abs(vals) - 1.0) < 0.1  # keep samples off the clip edges
    vals[near_edge] += 0.25 * np.sign(vals[near_edge])
    a = Tensor(vals, requires_grad=True)

    def f():
        return (T.clip(a, -1.0, 1.0) * 2.0).sum()

    return f, [a]


def _case_reductions(rng):
    a = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    proj = rng.normal(size=(2, 4))

    def f():
        return (a.sum(axis=1) * Tensor(proj)).sum() + a.mean() + a.sum(axis=(0, 2)).sum()

    return f, [a]


def _case_shape_ops(rng):
    a = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(2, 1, 4)), requires_grad=True)
    proj = rng.normal(size=(2, 3, 4))

    def f():
        cat = T.concat([a, b], axis=1)
        tiled = T.tile(b, (1, 3, 1))
        sliced = cat[:, 1:, :]
        return ((sliced + tiled) * Tensor(proj)).sum() + T.reshape(a, (6, 4)).sum()

    return f, [a, b]


def _case_activations(rng):
    a = Tensor(_away_from_zero(rng.normal(size=(3, 5))), requires_grad=True)
    proj = rng.normal(size=(3, 5))

    def f():
        return ((T.relu(a) + T.leaky_relu(a) + T.sigmoid(a)) * Tensor(proj)).sum()

    return f, [a]


def _case_softmax(rng):
    a = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    proj = rng.normal(size=(2, 3, 4))

    def f():
        return (T.softmax(a, axis=-1) * Tensor(proj)).sum()

    return f, [a]


def _case_conv_same(rng):
    x = Tensor(rng.normal(size=(2, 5, 6, 3)), requires_grad=True)
    w = Tensor(rng.normal(size=(4, 3, 3, 3)) * 0.5, requires_grad=True)
    b = Tensor(rng.normal(size=4), requires_grad=True)
    proj = rng.normal(size=(2, 5, 6, 4))

    def f():
        return (T.conv2d(x, w, b, stride=1, padding="same") * Tensor(proj)).sum()

    return f, [x, w, b]


def _case_conv_strided_valid(rng):
    x = Tensor(rng.normal(size=(1, 7, 7, 2)), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 2, 3, 3)) * 0.5, requires_grad=True)
    proj = rng.normal(size=(1, 3, 3, 3))

    def f():
        return (T.conv2d(x, w, None, stride=2, padding="valid") * Tensor(proj)).sum()

    return f, [x, w]


def _case_transposed_conv(rng):
    x = Tensor(rng.normal(size=(1, 3, 4, 2)), requires_grad=True)
    w = Tensor(rng.normal(size=(2, 3, 3, 3)) * 0.5, requires_grad=True)
    proj = rng.normal(size=(1, 6, 8, 3))

    def f():
        return (T.transposed_conv2d(x, w, stride=2) * Tensor(proj)).sum()

    return f, [x, w]


def _case_maxpool(rng):
    x = Tensor(rng.normal(size=(2, 6, 6, 2)), requires_grad=True)
    proj = rng.normal(size=(2, 3, 3, 2))

    def f():
        return (T.maxpool2d(x, 2, 2) * Tensor(proj)).sum()

    return f, [x]


def _case_upsample(rng):
    x = Tensor(rng.normal(size=(1, 3, 3, 2)), requires_grad=True)
    proj = rng.normal(size=(1, 6, 6, 2))

    def f():
        return (T.upsample_nearest(x, 2) * Tensor(proj)).sum()

    return f, [x]


def _case_batchnorm_train(rng):
    x = Tensor(rng.normal(size=(2, 4, 4, 3)), requires_grad=True)
    scale = Tensor(rng.uniform(0.5, 1.5, 3), requires_grad=True)
    shift = Tensor(rng.normal(size=3), requires_grad=True)
    proj = rng.normal(size=(2, 4, 4, 3))

    def f():
        return (T.batchnorm(x, scale, shift, mode="train") * Tensor(proj)).sum()

    return f, [x, scale, shift]


def _case_batchnorm_eval(rng):
    x = Tensor(rng.normal(size=(2, 3, 3, 2)), requires_grad=True)
    scale = Tensor(rng.uniform(0.5, 1.5, 2), requires_grad=True)
    shift = Tensor(rng.normal(size=2), requires_grad=True)
    state = T.BatchNormState(2)
    state.mean[...] = rng.normal(size=2)
    state.var[...] = rng.uniform(0.5, 2.0, 2)
    proj = rng.normal(size=(2, 3, 3, 2))

    def f():
        return (T.batchnorm(x, scale, shift, mode="eval", state=state) * Tensor(proj)).sum()

    return f, [x, scale, shift]


def _case_involution_apply(rng):
    x = Tensor(rng.normal(size=(1, 5, 5, 4)), requires_grad=True)
    k = Tensor(rng.normal(size=(1, 5, 5, 3, 3, 2)), requires_grad=True)
    dw = rng.uniform(0.2, 1.0, size=(1, 5, 5, 3, 3))
    proj = rng.normal(size=(1, 5, 5, 4))

    def f():
        return (ops.involution_apply(x, k, dw, groups=2) * Tensor(proj)).sum()

    return f, [x, k]


def _case_kernel_generator(rng):
    mode = "coordinate" if rng.integers(2) else "broadcast"
    net = ops.HyperNetwork(3, 3, mode, rng)
    x = Tensor(rng.normal(size=(2, 4, 4, 3)), requires_grad=True)
    proj = rng.normal(size=(2, 4, 4, 3, 3, 1))

    def f():
        return (net.generate(x) * Tensor(proj)).sum()

    return f, [x] + net.parameters()


def _case_depth_aware_operator(rng):
    net = ops.HyperNetwork(3, 3, "coordinate", rng)
    x = Tensor(rng.normal(size=(1, 6, 6, 3)), requires_grad=True)
    depth = rng.uniform(0.5, 4.0, size=(1, 6, 6))
    kind = WeightingKind.parse("inverse-multiquadric", 2.0)
    proj = rng.normal(size=(1, 6, 6, 3))

    def f():
        out = ops.depth_aware_hyper_involution_forward(x, depth, net, kind)
        return (out * Tensor(proj)).sum()

    return f, [x] + net.parameters()


def _case_involution_generator(rng):
    gen = ops.InvolutionGenerator(4, 3, groups=2, rng=rng)
    x = Tensor(rng.normal(size=(1, 5, 5, 4)), requires_grad=True)
    proj = rng.normal(size=(1, 5, 5, 4))

    def f():
        return (ops.involution_forward(x, gen.generate(x), groups=2) * Tensor(proj)).sum()

    return f, [x] + gen.parameters()


def _case_fusion(rng):
    stage = fusion_mod.FusionStage(3, rng)
    odd = bool(rng.integers(2))
    hw = 7 if odd else 8
    rgb = Tensor(rng.normal(size=(1, hw, hw, 3)), requires_grad=True)
    dep = Tensor(rng.normal(size=(1, hw, hw, 3)), requires_grad=True)
    proj = rng.normal(size=(1, hw, hw, 3))

    def f():
        return (stage(rgb, dep) * Tensor(proj)).sum()

    return f, [rgb, dep] + stage.parameters()


def _case_detection_loss(rng):
    anchors = np.array([[0.2, 0.3], [0.5, 0.4]])
    raw = Tensor(rng.normal(size=(1, 2, 2, 2, 7)), requires_grad=True)
    annotations = [[(0, 0.3, 0.4, 0.25, 0.3), (1, 0.8, 0.7, 0.4, 0.35)]]
    assign = loss_mod.build_targets(annotations, 2, anchors, 2)
    frozen = loss_mod.confidence_targets(loss_mod.decode_head(raw, anchors), assign)

    def f():
        total, _ = loss_mod.detection_loss(raw, assign, anchors, conf_targets=frozen)
        return total

    return f, [raw]


CASES = {
    "arithmetic": _case_arith,
    "power-exp-sqrt": _case_power_exp_sqrt,
    "clip": _case_clip,
    "reductions": _case_reductions,
    "reshape-slice-concat-tile": _case_shape_ops,
    "activations": _case_activations,
    "softmax": _case_softmax,
    "conv2d-same": _case_conv_same,
    "conv2d-strided-valid": _case_conv_strided_valid,
    "transposed-conv2d": _case_transposed_conv,
    "maxpool2d": _case_maxpool,
    "upsample-nearest": _case_upsample,
    "batchnorm-train": _case_batchnorm_train,
    "batchnorm-eval": _case_batchnorm_eval,
    "involution-apply": _case_involution_apply,
    "kernel-generator": _case_kernel_generator,
    "depth-aware-operator": _case_depth_aware_operator,
    "involution-generator": _case_involution_generator,
    "fusion-stage": _case_fusion,
    "detection-loss": _case_detection_loss,
}


def corrupt_backward(op_fn, factor: float = 1.5):
    """Wrap an op so gradients flowing through it are scaled; for testing the
    checker itself."""

    def wrapped(*args, **kwargs):
        out = op_fn(*args, **kwargs)
        if out._backward is not None:
            original = out._backward
            out._backward = lambda g: original(g * factor)
        return out

    return wrapped


def run_suite(seeds, names=None, inject_fault: bool = False) -> list[CheckResult]:
    """Run every case at every seed; optionally sabotage one backward pass to
    prove the checker catches bad gradients."""
    selected = CASES if names is None else {n: CASES[n] for n in names}
    results = []
    saved = T.relu
    if inject_fault:
        T.relu = corrupt_backward(T.relu)
    try:
        for name, build in selected.items():
            for seed in seeds:
                f, tensors = build(np.random.default_rng(seed))
                ok, err = check_gradients(f, tensors)
                results.append(CheckResult(name, seed, ok, err))
    finally:
        T.relu = saved
    return results
