"""Trainable parameters, dense layers and MLP assembly."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .autodiff import Tensor

Array = np.ndarray


class ShapeError(ValueError):
    """Raised when an input width does not match a layer's configuration."""


class Parameter:
    """A named trainable tensor with gradient and Adam moment buffers."""

    __slots__ = ("name", "value", "grad", "adam_m", "adam_v")

    def __init__(self, name: str, value: Array) -> None:
        self.name = name
        # contiguous float64 so in-place views and raw serialization behave
        self.value = np.ascontiguousarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)

    def tensor(self) -> Tensor:
        """Wrap the current value as a graph leaf tied to this parameter."""
        return Tensor(self.value, param=self)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    @property
    def size(self) -> int:
        return self.value.size

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.value.shape})"


def orthogonal_init(shape: tuple[int, int], rng: np.random.Generator, gain: float = 1.0) -> Array:
    """Orthogonal weight matrix scaled by `gain` (QR of a gaussian draw)."""
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


class Module:
    """Minimal container: parameter discovery walks attributes recursively."""

    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        seen: set[int] = set()
        for p in self._iter_parameters():
            if id(p) not in seen:
                seen.add(id(p))
                out.append(p)
        return out

    def _iter_parameters(self) -> Iterator[Parameter]:
        for attr in vars(self).values():
            if isinstance(attr, Parameter):
                yield attr
            elif isinstance(attr, Module):
                yield from attr._iter_parameters()
            elif isinstance(attr, (list, tuple)):
                for item in attr:
                    if isinstance(item, Parameter):
                        yield item
                    elif isinstance(item, Module):
                        yield from item._iter_parameters()

    def zero_grads(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def trainable_layer_count(self) -> int:
        """Number of dense layers, counted from parameter metadata."""
        return sum(1 for p in self.parameters() if p.name.endswith(".w"))


class Linear(Module):
    """Dense layer y = x @ W + b for row-stacked inputs."""

    def __init__(
        self,
        d_in: int,
        d_out: int,
        rng: np.random.Generator,
        gain: float = 1.0,
        name: str = "linear",
    ) -> None:
        self.d_in = d_in
        self.d_out = d_out
        self.w = Parameter(f"{name}.w", orthogonal_init((d_in, d_out), rng, gain))
        self.b = Parameter(f"{name}.b", np.zeros((1, d_out)))

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.shape[-1] != self.d_in:
            raise ShapeError(
                f"{self.w.name}: expected input width {self.d_in}, got {x.data.shape[-1]}"
            )
        return x.matmul(self.w.tensor()) + self.b.tensor()


_ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "tanh": lambda t: t.tanh(),
    "relu": lambda t: t.relu(),
    "identity": lambda t: t,
}


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of a feed-forward stack: widths plus activation names."""

    layer_sizes: tuple[int, ...]
    activation: str = "tanh"
    final_activation: str = "identity"

    def __post_init__(self) -> None:
        if len(self.layer_sizes) < 2:
            raise ValueError("layer_sizes needs at least input and output widths")
        for name in (self.activation, self.final_activation):
            if name not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {name!r}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1


class Mlp(Module):
    """Stack of Linear layers per an MlpSpec."""

    def __init__(
        self,
        spec: MlpSpec,
        rng: np.random.Generator,
        name: str = "mlp",
        final_gain: float = 1.0,
    ) -> None:
        self.spec = spec
        self.layers: list[Linear] = []
        sizes = spec.layer_sizes
        for i in range(len(sizes) - 1):
            last = i == len(sizes) - 2
            gain = final_gain if last else 1.0
            self.layers.append(Linear(sizes[i], sizes[i + 1], rng, gain, f"{name}.l{i}"))

    def __call__(self, x: Tensor) -> Tensor:
        act = _ACTIVATIONS[self.spec.activation]
        final_act = _ACTIVATIONS[self.spec.final_activation]
        for i, layer in enumerate(self.layers):
            x = layer(x)
            x = final_act(x) if i == len(self.layers) - 1 else act(x)
        return x
