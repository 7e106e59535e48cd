from . import nn, optim, tensor
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .rng import Rng
from .tensor import Tensor, grad, no_grad

__all__ = [
    "nn",
    "optim",
    "tensor",
    "Tensor",
    "grad",
    "no_grad",
    "Rng",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
]
