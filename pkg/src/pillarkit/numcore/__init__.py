"""Minimal dense-array core: ops with hand-written backwards, layers, Adam,
finite-difference checks and PIPT tensor dumps."""
from .gradcheck import check_module, gradient_check, numeric_grad
from .io import dumps_tensor, load_tensor, loads_tensor, save_tensor
from .layers import (BatchNorm, Conv2d, ConvTranspose2d, Linear, Module, ReLU,
                     Sequential, conv_bn_relu)
from .ops import NonFiniteError, check_finite
from .optim import AdamState, adam_step

__all__ = [
    "AdamState", "BatchNorm", "Conv2d", "ConvTranspose2d", "Linear", "Module",
    "NonFiniteError", "ReLU", "Sequential", "adam_step", "check_finite",
    "check_module", "conv_bn_relu", "dumps_tensor", "gradient_check",
    "load_tensor", "loads_tensor", "numeric_grad", "save_tensor",
]
