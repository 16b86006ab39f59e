"""AdamW with decoupled weight decay."""

from __future__ import annotations

import numpy as np

from ..errors import NonFinite
from .tensor import Tensor


def adamw_step(
    param: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    step: int,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> None:
    """One in-place update. Decay acts on the parameter directly, never on the gradient."""
    if step < 1:
        raise ValueError("step counter starts at 1")
    if not np.all(np.isfinite(grad)):
        raise NonFinite("gradient contains NaN or Inf")
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1**step)
    vhat = v / (1.0 - beta2**step)
    if weight_decay != 0.0:
        param -= lr * weight_decay * param
    param -= lr * mhat / (np.sqrt(vhat) + eps)


class AdamW:
    """Holds first/second moments per named parameter; skips frozen ones."""

    def __init__(self, params: dict[str, Tensor], lr: float, weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 frozen: tuple[str, ...] = ()):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.frozen_prefixes = frozen
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()
                  if not self._is_frozen(name)}
        self.v = {name: np.zeros_like(arr) for name, arr in self.m.items()}

    def _is_frozen(self, name: str) -> bool:
        return any(name.startswith(p) for p in self.frozen_prefixes)

    def step(self) -> None:
        self.step_count += 1
        for name in self.m:
            p = self.params[name]
            if p.grad is None:
                continue
            adamw_step(p.data, p.grad, self.m[name], self.v[name], self.step_count,
                       self.lr, self.beta1, self.beta2, self.eps, self.weight_decay)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
