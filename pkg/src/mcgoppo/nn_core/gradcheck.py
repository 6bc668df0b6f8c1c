"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor, no_grad
from .layers import Parameter


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Parameter],
    eps: float = 1e-5,
) -> float:
    """Compare tape gradients of a scalar function against central differences.

    `f` must rebuild its graph from the current parameter values on every
    call and be deterministic.  Returns the worst relative error over all
    parameter entries; the relative error of entry g vs numeric estimate n
    is |g - n| / max(|g|, |n|, 1e-6).
    """
    if not (0.0 < eps <= 1e-2):
        raise ValueError("eps must lie in (0, 1e-2]")
    params = list(params)
    for p in params:
        p.zero_grad()
    loss = f()
    loss.backward()
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, grad in zip(params, analytic):
        for idx in np.ndindex(p.value.shape):
            orig = p.value[idx]
            p.value[idx] = orig + eps
            with no_grad():
                f_plus = f().item()
            p.value[idx] = orig - eps
            with no_grad():
                f_minus = f().item()
            p.value[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            denom = max(abs(grad[idx]), abs(numeric), 1e-6)
            err = abs(grad[idx] - numeric) / denom
            if err > worst:
                worst = err
    for p in params:
        p.zero_grad()
    return worst
