"""Reverse-mode autodiff over dense NCHW tensors."""

from .ops import (
    BatchNormState,
    abs_,
    add,
    add_n,
    batchnorm2d,
    conv2d,
    flatten,
    fully_connected,
    global_avg_pool,
    log_clamped,
    max_pool,
    mean_all,
    mul,
    pointwise_map,
    reduce,
    relu,
    reshape,
    scale,
    separable_linear,
    sigmoid,
    softmax,
    sub,
    sum_all,
    sum_rows,
    upsample_nearest,
)
from .optim import SGD, sgd_step
from .tensor import DEFAULT_DTYPE, Tape, Tensor, backward, set_debug

__all__ = [
    "BatchNormState", "DEFAULT_DTYPE", "SGD", "Tape", "Tensor", "abs_", "add", "add_n",
    "backward", "batchnorm2d", "conv2d", "flatten", "fully_connected", "global_avg_pool",
    "log_clamped", "max_pool", "mean_all", "mul", "pointwise_map", "reduce", "relu",
    "reshape", "scale", "separable_linear", "set_debug", "sgd_step", "sigmoid", "softmax",
    "sub", "sum_all", "sum_rows", "upsample_nearest",
]
