"""Adam optimizer and gradient-norm clipping."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .layers import Parameter


class NonFiniteGradientError(RuntimeError):
    """Raised before any state is touched when a gradient contains NaN/Inf."""


class Adam:
    """Adam with bias correction; state lives on the parameters themselves."""

    def __init__(
        self,
        params: Sequence[Parameter],
        lr: float = 5e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradientError(f"non-finite gradient in {p.name}")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p in self.params:
            p.adam_m *= self.beta1
            p.adam_m += (1.0 - self.beta1) * p.grad
            p.adam_v *= self.beta2
            p.adam_v += (1.0 - self.beta2) * p.grad * p.grad
            m_hat = p.adam_m / bc1
            v_hat = p.adam_v / bc2
            p.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_grad_norm(params: Sequence[Parameter], max_norm: float) -> float:
    """Scale gradients in place so the global L2 norm is at most max_norm."""
    total = 0.0
    for p in params:
        total += float(np.sum(p.grad * p.grad))
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in params:
            p.grad *= scale
    return norm
