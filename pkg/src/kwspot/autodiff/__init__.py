from . import ops
from .gradcheck import grad_check
from .optim import Adam
from .tensor import (
    Parameter,
    Tensor,
    as_tensor,
    backward,
    collect_grads,
    grad_enabled,
    no_grad,
    toposort,
    zero_grad,
)

__all__ = [
    "ops",
    "grad_check",
    "Adam",
    "Parameter",
    "Tensor",
    "as_tensor",
    "backward",
    "collect_grads",
    "grad_enabled",
    "no_grad",
    "toposort",
    "zero_grad",
]
