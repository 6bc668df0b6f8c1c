"""Reverse-mode automatic differentiation over numpy arrays.

Every operation records a backward closure on the output node; calling
``backward()`` on a scalar result replays the recorded tape in reverse
topological order and accumulates gradients into the leaf nodes.  Leaves
created from a :class:`~mcgoppo.nn_core.layers.Parameter` push their
gradient into the parameter's ``grad`` buffer at the end of the walk.

All data is float64.  Arrays are at most 3-d; the third dimension is only
used for batched matmul/softmax inside attention blocks.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

Array = np.ndarray

_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables tape recording (pure forward passes)."""

    def __enter__(self) -> "no_grad":
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc) -> None:
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node in the recorded computation graph wrapping a float64 array."""

    __slots__ = ("data", "grad", "_parents", "_backward", "param")

    def __init__(
        self,
        data: Array | float | Sequence,
        parents: tuple["Tensor", ...] = (),
        backward: Callable[[], None] | None = None,
        param=None,
    ) -> None:
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad: Array | None = None
        self._parents = parents
        self._backward = backward
        self.param = param

    # -- graph -----------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def _accumulate(self, g: Array) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Backpropagate from a scalar output through the recorded tape."""
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar output, got shape {self.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward()
        for node in topo:
            if node.param is not None and node.grad is not None:
                node.param.grad += node.grad

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = as_tensor(other)
        out_data = self.data + other.data
        if not _GRAD_ENABLED:
            return Tensor(out_data)
        out = Tensor(out_data, (self, other))

        def bw() -> None:
            self._accumulate(_unbroadcast(out.grad, self.data.shape))
            other._accumulate(_unbroadcast(out.grad, other.data.shape))

        out._backward = bw
        return out

    def __mul__(self, other) -> "Tensor":
        other = as_tensor(other)
        out_data = self.data * other.data
        if not _GRAD_ENABLED:
            return Tensor(out_data)
        out = Tensor(out_data, (self, other))

        def bw() -> None:
            self._accumulate(_unbroadcast(out.grad * other.data, self.data.shape))
            other._accumulate(_unbroadcast(out.grad * self.data, other.data.shape))

        out._backward = bw
        return out

    def __neg__(self) -> "Tensor":
        return self * (-1.0)

    def __sub__(self, other) -> "Tensor":
        return self + (-as_tensor(other))

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other) + (-self)

    def __truediv__(self, other) -> "Tensor":
        other = as_tensor(other)
        return self * other ** -1.0

    def __rtruediv__(self, other) -> "Tensor":
        return as_tensor(other) * self ** -1.0

    __radd__ = __add__
    __rmul__ = __mul__

    def __pow__(self, exponent: float) -> "Tensor":
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out_data = self.data ** exponent
        if not _GRAD_ENABLED:
            return Tensor(out_data)
        out = Tensor(out_data, (self,))

        def bw() -> None:
            self._accumulate(out.grad * exponent * self.data ** (exponent - 1.0))

        out._backward = bw
        return out

    # -- shape ops ---------------------------------------------------------

    def reshape(self, *shape: int) -> "Tensor":
        out_data = self.data.reshape(shape)
        if not _GRAD_ENABLED:
            return Tensor(out_data)
        out = Tensor(out_data, (self,))

        def bw() -> None:
            self._accumulate(out.grad.reshape(self.data.shape))

        out._backward = bw
        return out

    def swap_last2(self) -> "Tensor":
        """Transpose the last two axes (matrix transpose for 2-d input)."""
        out_data = np.swapaxes(self.data, -1, -2)
        if not _GRAD_ENABLED:
            return Tensor(out_data)
        out = Tensor(out_data, (self,))

        def bw() -> None:
            self._accumulate(np.swapaxes(out.grad, -1, -2))

        out._backward = bw
        return out

    def cols(self, start: int, stop: int) -> "Tensor":
        """Slice columns [start, stop) along the last axis."""
        out_data = self.data[..., start:stop]
        if not _GRAD_ENABLED:
            return Tensor(out_data)
        out = Tensor(out_data, (self,))

        def bw() -> None:
            g = np.zeros_like(self.data)
            g[..., start:stop] = out.grad
            self._accumulate(g)

        out._backward = bw
        return out

    # -- reductions ----------------------------------------------------------

    def sum(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        out_data = self.data.sum(axis=axis, keepdims=keepdims)
        if not _GRAD_ENABLED:
            return Tensor(out_data)
        out = Tensor(out_data, (self,))

        def bw() -> None:
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.data.shape).copy())

        out._backward = bw
        return out

    def mean(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- elementwise nonlinearities -------------------------------------------

    def exp(self) -> "Tensor":
        out_data = np.exp(self.data)
        if not _GRAD_ENABLED:
            return Tensor(out_data)
        out = Tensor(out_data, (self,))

        def bw() -> None:
            self._accumulate(out.grad * out_data)

        out._backward = bw
        return out

    def log(self) -> "Tensor":
        out_data = np.log(self.data)
        if not _GRAD_ENABLED:
            return Tensor(out_data)
        out = Tensor(out_data, (self,))

        def bw() -> None:
            self._accumulate(out.grad / self.data)

        out._backward = bw
        return out

    def tanh(self) -> "Tensor":
        out_data = np.tanh(self.data)
        if not _GRAD_ENABLED:
            return Tensor(out_data)
        out = Tensor(out_data, (self,))

        def bw() -> None:
            self._accumulate(out.grad * (1.0 - out_data * out_data))

        out._backward = bw
        return out

    def relu(self) -> "Tensor":
        out_data = np.maximum(self.data, 0.0)
        if not _GRAD_ENABLED:
            return Tensor(out_data)
        out = Tensor(out_data, (self,))

        def bw() -> None:
            self._accumulate(out.grad * (self.data > 0.0))

        out._backward = bw
        return out

    # -- matrix ops ------------------------------------------------------------

    def matmul(self, other: "Tensor") -> "Tensor":
        other = as_tensor(other)
        out_data = np.matmul(self.data, other.data)
        if not _GRAD_ENABLED:
            return Tensor(out_data)
        out = Tensor(out_data, (self, other))

        def bw() -> None:
            ga = np.matmul(out.grad, np.swapaxes(other.data, -1, -2))
            gb = np.matmul(np.swapaxes(self.data, -1, -2), out.grad)
            self._accumulate(_unbroadcast(ga, self.data.shape))
            other._accumulate(_unbroadcast(gb, other.data.shape))

        out._backward = bw
        return out

    __matmul__ = matmul

    # -- fused softmax family ----------------------------------------------------

    def softmax(self, axis: int = -1) -> "Tensor":
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out_data = e / e.sum(axis=axis, keepdims=True)
        if not _GRAD_ENABLED:
            return Tensor(out_data)
        out = Tensor(out_data, (self,))

        def bw() -> None:
            g = out.grad
            dot = (g * out_data).sum(axis=axis, keepdims=True)
            self._accumulate(out_data * (g - dot))

        out._backward = bw
        return out

    def log_softmax(self, axis: int = -1) -> "Tensor":
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        out_data = shifted - lse
        if not _GRAD_ENABLED:
            return Tensor(out_data)
        out = Tensor(out_data, (self,))

        def bw() -> None:
            g = out.grad
            self._accumulate(g - np.exp(out_data) * g.sum(axis=axis, keepdims=True))

        out._backward = bw
        return out

    # -- indexing ----------------------------------------------------------------

    def take_rows(self, idx: Array) -> "Tensor":
        """Gather rows by integer index; duplicates allowed (grads scatter-add)."""
        idx = np.asarray(idx, dtype=np.int64)
        out_data = self.data[idx]
        if not _GRAD_ENABLED:
            return Tensor(out_data)
        out = Tensor(out_data, (self,))

        def bw() -> None:
            g = np.zeros_like(self.data)
            np.add.at(g, idx, out.grad)
            self._accumulate(g)

        out._backward = bw
        return out

    def take_per_row(self, idx: Array) -> "Tensor":
        """Pick one column per row of a 2-d tensor; returns shape (rows,)."""
        idx = np.asarray(idx, dtype=np.int64)
        rows = np.arange(self.data.shape[0])
        out_data = self.data[rows, idx]
        if not _GRAD_ENABLED:
            return Tensor(out_data)
        out = Tensor(out_data, (self,))

        def bw() -> None:
            g = np.zeros_like(self.data)
            np.add.at(g, (rows, idx), out.grad)
            self._accumulate(g)

        out._backward = bw
        return out

    # -- clipping / min-max ---------------------------------------------------------

    def clip(self, lo: float | Array, hi: float | Array) -> "Tensor":
        out_data = np.clip(self.data, lo, hi)
        if not _GRAD_ENABLED:
            return Tensor(out_data)
        out = Tensor(out_data, (self,))
        inside = (self.data >= lo) & (self.data <= hi)

        def bw() -> None:
            self._accumulate(out.grad * inside)

        out._backward = bw
        return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x: Array | float) -> Tensor:
    """Wrap an array as a graph constant (gradient is discarded)."""
    return Tensor(x)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; gradient splits evenly on exact ties."""
    a, b = as_tensor(a), as_tensor(b)
    out_data = np.maximum(a.data, b.data)
    if not _GRAD_ENABLED:
        return Tensor(out_data)
    out = Tensor(out_data, (a, b))
    wa = (a.data > b.data) + 0.5 * (a.data == b.data)

    def bw() -> None:
        a._accumulate(_unbroadcast(out.grad * wa, a.data.shape))
        b._accumulate(_unbroadcast(out.grad * (1.0 - wa), b.data.shape))

    out._backward = bw
    return out


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; gradient splits evenly on exact ties."""
    a, b = as_tensor(a), as_tensor(b)
    out_data = np.minimum(a.data, b.data)
    if not _GRAD_ENABLED:
        return Tensor(out_data)
    out = Tensor(out_data, (a, b))
    wa = (a.data < b.data) + 0.5 * (a.data == b.data)

    def bw() -> None:
        a._accumulate(_unbroadcast(out.grad * wa, a.data.shape))
        b._accumulate(_unbroadcast(out.grad * (1.0 - wa), b.data.shape))

    out._backward = bw
    return out


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    if not _GRAD_ENABLED:
        return Tensor(out_data)
    out = Tensor(out_data, tuple(tensors))
    widths = [t.data.shape[axis] for t in tensors]

    def bw() -> None:
        offset = 0
        for t, w in zip(tensors, widths):
            sl = [slice(None)] * out_data.ndim
            sl[axis if axis >= 0 else out_data.ndim + axis] = slice(offset, offset + w)
            t._accumulate(out.grad[tuple(sl)])
            offset += w

    out._backward = bw
    return out


def softmax_np(x: Array, axis: int = -1) -> Array:
    """Numerically stable softmax on plain arrays (shared by non-tape callers)."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("softmax of an empty array")
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


SQRT = math.sqrt
