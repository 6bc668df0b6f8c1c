"""Differentiable numeric core: tape autodiff, dense layers, attention, Adam."""

from .autodiff import Tensor, as_tensor, concat, constant, maximum, minimum, no_grad, softmax_np
from .attention import attention
from .checkpoint import (
    CheckpointError,
    load_checkpoint,
    load_params,
    save_checkpoint,
    save_params,
)
from .gradcheck import grad_check
from .layers import Linear, Mlp, MlpSpec, Module, Parameter, ShapeError, orthogonal_init
from .optim import Adam, NonFiniteGradientError, clip_grad_norm

__all__ = [
    "Adam",
    "CheckpointError",
    "Linear",
    "Mlp",
    "MlpSpec",
    "Module",
    "NonFiniteGradientError",
    "Parameter",
    "ShapeError",
    "Tensor",
    "as_tensor",
    "attention",
    "clip_grad_norm",
    "concat",
    "constant",
    "grad_check",
    "load_checkpoint",
    "load_params",
    "maximum",
    "minimum",
    "no_grad",
    "orthogonal_init",
    "save_checkpoint",
    "save_params",
    "softmax_np",
]
