"""Minimal reverse-mode autodiff engine: tensors, kernels, SGD, gradient checks."""

from .gradcheck import finite_difference_check, finite_difference_sample
from .ops import (
    add,
    batchnorm2d,
    check_finite,
    conv2d,
    conv_output_size,
    global_avg_pool,
    linear,
    maxpool2d,
    op_counts,
    relu,
    reset_op_counts,
    rmse_loss,
    softmax_cross_entropy,
    weighted_sum,
)
from .optim import sgd_momentum_step
from .tensor import NumericFault, Parameter, ShapeError, Tensor, backward

__all__ = [
    "Tensor",
    "Parameter",
    "backward",
    "ShapeError",
    "NumericFault",
    "conv2d",
    "batchnorm2d",
    "maxpool2d",
    "global_avg_pool",
    "linear",
    "relu",
    "softmax_cross_entropy",
    "rmse_loss",
    "add",
    "weighted_sum",
    "check_finite",
    "conv_output_size",
    "op_counts",
    "reset_op_counts",
    "sgd_momentum_step",
    "finite_difference_check",
    "finite_difference_sample",
]
