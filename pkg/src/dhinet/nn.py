"""Minimal module system: parameter registry, state dicts, common layers."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Holds parameters (trainable tensors), buffers (persistent state) and
    child modules. Assigning a requires_grad Tensor attribute registers a
    parameter; assigning a Module registers a child."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name, array: np.ndarray):
        self._buffers[name] = np.asarray(array, dtype=np.float64)
        object.__setattr__(self, name, self._buffers[name])

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name in self._buffers:
            yield prefix + name, self._buffers[name]
        for cname, child in self._children.items():
            yield from child.named_buffers(prefix + cname + ".")

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        for name, buf in self.named_buffers():
            state[name] = buf
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = self.state_dict()
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise ValueError(f"state mismatch; missing {missing}, unexpected {extra}")
        for name, target in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != target.shape:
                raise ValueError(f"{name}: shape {value.shape} != expected {target.shape}")
            target[...] = value

    def train(self, flag: bool = True):
        object.__setattr__(self, "training", flag)
        for child in self._children.values():
            child.train(flag)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: str = "same", bias: bool = True):
        super().__init__()
        self.stride = stride
        self.padding = padding
        std = np.sqrt(2.0 / (in_ch * kernel * kernel))
        self.weight = Tensor(rng.normal(0.0, std, (out_ch, in_ch, kernel, kernel)),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class TransposedConv2d(Module):
    """Adjoint-of-conv layer mapping in_ch -> out_ch, upsampling by ``stride``."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator,
                 stride: int = 2):
        super().__init__()
        self.stride = stride
        std = np.sqrt(2.0 / (in_ch * kernel * kernel))
        self.weight = Tensor(rng.normal(0.0, std, (in_ch, out_ch, kernel, kernel)),
                             requires_grad=True)

    def __call__(self, x: Tensor, out_hw=None) -> Tensor:
        return T.transposed_conv2d(x, self.weight, stride=self.stride, out_hw=out_hw)


class BatchNorm2d(Module):
    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.9):
        super().__init__()
        self.eps = eps
        self.scale = Tensor(np.ones(channels), requires_grad=True)
        self.shift = Tensor(np.zeros(channels), requires_grad=True)
        self.state = T.BatchNormState(channels, momentum)
        self.register_buffer("running_mean", self.state.mean)
        self.register_buffer("running_var", self.state.var)

    def __call__(self, x: Tensor) -> Tensor:
        # running_mean / running_var buffers alias the state arrays, which
        # batchnorm updates in place, so state persists through state_dict.
        mode = "train" if self.training else "eval"
        return T.batchnorm(x, self.scale, self.shift, eps=self.eps, mode=mode, state=self.state)
