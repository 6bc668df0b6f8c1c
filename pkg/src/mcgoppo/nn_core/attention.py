"""Single-head scaled dot-product attention."""

from __future__ import annotations

import math

from .autodiff import Tensor, as_tensor


def attention(q: Tensor, k: Tensor, v: Tensor, return_weights: bool = False):
    """softmax(q k^T / sqrt(d_k)) v with the softmax taken over key rows.

    Accepts 2-d inputs (rows are items) or 3-d inputs (leading batch axis).
    The produced weight matrix is row-stochastic.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    d_k = q.data.shape[-1]
    if k.data.shape[-1] != d_k:
        raise ValueError(f"query width {d_k} != key width {k.data.shape[-1]}")
    if v.data.shape[-2] != k.data.shape[-2]:
        raise ValueError(
            f"value rows {v.data.shape[-2]} != key rows {k.data.shape[-2]}"
        )
    scores = q.matmul(k.swap_last2()) * (1.0 / math.sqrt(d_k))
    weights = scores.softmax(axis=-1)
    out = weights.matmul(v)
    if return_weights:
        return out, weights
    return out
