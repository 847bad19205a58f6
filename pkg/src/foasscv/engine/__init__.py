"""Minimal reverse-mode tensor engine for the FOA-Conv3D model."""

from .checkpoint import load_checkpoint, save_checkpoint
from .functional import (conv3d, dropout, flatten, linear, maxpool3d, mse_loss,
                         one_pole_smooth, relu, sscv_normalize)
from .gradcheck import grad_check
from .optim import Adam
from .tensor import Parameter, Tensor, as_tensor, exp, log, no_grad, sigmoid

__all__ = [
    "Adam", "Parameter", "Tensor", "as_tensor", "conv3d", "dropout", "exp",
    "flatten", "grad_check", "linear", "load_checkpoint", "log", "maxpool3d",
    "mse_loss", "no_grad", "one_pole_smooth", "relu", "save_checkpoint",
    "sigmoid", "sscv_normalize",
]
