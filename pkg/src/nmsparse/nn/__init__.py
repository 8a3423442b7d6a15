"""Hand-written neural network primitives (conv, batch norm, head layers, SGD)."""

from .batchnorm import BatchNormCache, BatchNormParams, batchnorm_backward, batchnorm_forward
from .conv import ConvSpec, conv2d_backward, conv2d_forward, output_hw
from .layers import (
    global_avg_pool_backward,
    global_avg_pool_forward,
    linear_backward,
    linear_forward,
    relu_backward,
    relu_forward,
    softmax_cross_entropy,
)
from .optim import SGD, sgd_step

__all__ = [
    "BatchNormCache",
    "BatchNormParams",
    "ConvSpec",
    "SGD",
    "batchnorm_backward",
    "batchnorm_forward",
    "conv2d_backward",
    "conv2d_forward",
    "global_avg_pool_backward",
    "global_avg_pool_forward",
    "linear_backward",
    "linear_forward",
    "output_hw",
    "relu_backward",
    "relu_forward",
    "sgd_step",
    "softmax_cross_entropy",
]
