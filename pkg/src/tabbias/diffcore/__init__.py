"""Small differentiable numeric core: tensors, MLPs, Adam, gradient checks."""

from . import autodiff
from .autodiff import Tensor, grad, no_grad
from .mlp import MlpSpec, init_params, mlp_forward
from .optim import (
    AdamState,
    GradCheckReport,
    NonFiniteLossError,
    adam_step,
    grad_check,
    loss_and_grad,
    loss_value,
)
from .params import ParamSet, ShapeMismatchError

__all__ = [
    "AdamState",
    "GradCheckReport",
    "MlpSpec",
    "NonFiniteLossError",
    "ParamSet",
    "ShapeMismatchError",
    "Tensor",
    "adam_step",
    "autodiff",
    "grad",
    "grad_check",
    "init_params",
    "loss_and_grad",
    "loss_value",
    "mlp_forward",
    "no_grad",
]
