"""Reverse-mode autodiff tensor engine scoped to the operations this model needs."""

from .gradcheck import CheckResult, check_gradients, numerical_grad
from .ops import (
    absolute,
    add,
    broadcast_to,
    concat,
    conv2d,
    conv3d,
    dropout,
    flatten,
    gelu,
    group_norm,
    layer_norm,
    leaky_relu,
    linear,
    log_softmax,
    matmul,
    mean,
    mul,
    multi_head_attention,
    neg,
    reshape,
    scale,
    slice_axis,
    softmax,
    sub,
    sum_,
    transpose,
    upsample_to,
)
from .optim import AdamW, adamw_step
from .rng import RngState
from .tensor import GradTape, Tensor, as_tensor, backward, tape

__all__ = [
    "AdamW",
    "CheckResult",
    "GradTape",
    "RngState",
    "Tensor",
    "absolute",
    "adamw_step",
    "add",
    "as_tensor",
    "backward",
    "broadcast_to",
    "check_gradients",
    "concat",
    "conv2d",
    "conv3d",
    "dropout",
    "flatten",
    "gelu",
    "group_norm",
    "layer_norm",
    "leaky_relu",
    "linear",
    "log_softmax",
    "matmul",
    "mean",
    "mul",
    "multi_head_attention",
    "neg",
    "numerical_grad",
    "reshape",
    "scale",
    "slice_axis",
    "softmax",
    "sub",
    "sum_",
    "tape",
    "transpose",
    "upsample_to",
]
