"""Adam with bias correction, operating on Tensor parameters in place."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def adam_step(value: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
              t: int, lr: float, betas=(0.9, 0.999), eps: float = 1e-8) -> np.ndarray:
    """One bias-corrected update; mutates ``value``, ``m`` and ``v``."""
    b1, b2 = betas
    m *= b1
    m += (1.0 - b1) * grad
    v *= b2
    v += (1.0 - b2) * grad * grad
    mhat = m / (1.0 - b1 ** t)
    vhat = v / (1.0 - b2 ** t)
    value -= lr * mhat / (np.sqrt(vhat) + eps)
    return value


class Adam:
    """Accepts either Tensors or ``(name, Tensor)`` pairs (names aid errors)."""

    def __init__(self, params, lr: float = 0.0005,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        items = list(params)
        if items and isinstance(items[0], tuple):
            self.names = [name for name, _ in items]
            self.params = [p for _, p in items]
        else:
            self.params = items
            self.names = [f"param{i}" for i in range(len(items))]
        self.lr = float(lr)
        self.betas = (float(betas[0]), float(betas[1]))
        self.eps = float(eps)
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        missing = [n for n, p in zip(self.names, self.params) if p.grad is None]
        if missing:
            raise RuntimeError(f"parameters {missing} have no gradient; run backward first")
        self.t += 1
        for p, m, v in zip(self.params, self._m, self._v):
            adam_step(p.data, p.grad, m, v, self.t, self.lr, self.betas, self.eps)

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params)
