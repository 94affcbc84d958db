from railwave.nn.gradcheck import GradCheckReport, grad_check
from railwave.nn.layers import (
    BatchNormParams,
    ConvParams,
    LinearParams,
    PoolParams,
    add,
    batchnorm2d,
    conv2d,
    global_avg_pool,
    linear,
    pool2d,
    relu,
    reshape,
    softmax,
    softmax_cross_entropy,
)
from railwave.nn.optim import SGD, sgd_step, step_schedule
from railwave.nn.tensor import Tensor, zero_grads

__all__ = [
    "BatchNormParams",
    "ConvParams",
    "GradCheckReport",
    "LinearParams",
    "PoolParams",
    "SGD",
    "Tensor",
    "add",
    "batchnorm2d",
    "conv2d",
    "global_avg_pool",
    "grad_check",
    "linear",
    "pool2d",
    "relu",
    "reshape",
    "sgd_step",
    "softmax",
    "softmax_cross_entropy",
    "step_schedule",
    "zero_grads",
]
