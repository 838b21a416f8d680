"""
numcore - numpy tensors with reverse-mode autodiff, the layer primitives of the
beam predictor, and the Adam optimizer
"""

from beamcast.numcore.gradcheck import GradCheckReport, grad_check, relative_error
from beamcast.numcore.ops import (
    BatchNormStats,
    batchnorm2d,
    concat,
    conv2d,
    cross_entropy,
    dropout,
    layernorm,
    linear,
    matmul,
    maxpool2d,
    relu,
    softmax,
)
from beamcast.numcore.optim import AdamState, LrSchedule, adam_step, clip_grad_norm, global_grad_norm
from beamcast.numcore.tensor import (
    Function,
    Tensor,
    default_dtype,
    get_default_dtype,
    grad_enabled,
    no_grad,
    set_default_dtype,
)

__all__ = [
    "AdamState",
    "BatchNormStats",
    "Function",
    "GradCheckReport",
    "LrSchedule",
    "Tensor",
    "adam_step",
    "batchnorm2d",
    "clip_grad_norm",
    "concat",
    "conv2d",
    "cross_entropy",
    "default_dtype",
    "dropout",
    "get_default_dtype",
    "global_grad_norm",
    "grad_check",
    "grad_enabled",
    "layernorm",
    "linear",
    "matmul",
    "maxpool2d",
    "no_grad",
    "relative_error",
    "relu",
    "softmax",
    "set_default_dtype",
]
