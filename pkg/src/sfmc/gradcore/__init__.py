"""Minimal reverse-mode autodiff over dense float64 arrays."""

from .checkpoint import MAGIC, load_checkpoint, load_into, save_checkpoint
from .optim import RmsProp, rmsprop_step
from .tensor import (
    Node,
    Tensor,
    absolute,
    add,
    as_tensor,
    avg_pool2d,
    backward,
    bilinear_sample,
    concat,
    constant,
    conv2d,
    conv3d,
    custom_op,
    div,
    exp,
    getitem,
    log,
    matmul,
    maximum,
    mean,
    minimum,
    mul,
    neg,
    parameter,
    pow_scalar,
    relu,
    reshape,
    sigmoid,
    softmax,
    solve,
    sqrt,
    sub,
    sum,
    transpose,
)

__all__ = [
    "MAGIC",
    "Node",
    "RmsProp",
    "Tensor",
    "absolute",
    "add",
    "as_tensor",
    "avg_pool2d",
    "backward",
    "bilinear_sample",
    "concat",
    "constant",
    "conv2d",
    "conv3d",
    "custom_op",
    "div",
    "exp",
    "getitem",
    "load_checkpoint",
    "load_into",
    "log",
    "matmul",
    "maximum",
    "mean",
    "minimum",
    "mul",
    "neg",
    "parameter",
    "pow_scalar",
    "relu",
    "reshape",
    "rmsprop_step",
    "save_checkpoint",
    "sigmoid",
    "softmax",
    "solve",
    "sqrt",
    "sub",
    "sum",
    "transpose",
]
