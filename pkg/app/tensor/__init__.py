"""
Minimal dense tensor with reverse-mode autodiff
"""
from app.tensor.ops import (
    BatchNormState,
    absolute,
    add,
    batchnorm2d,
    clip,
    concat,
    conv2d,
    div,
    elementwise,
    gather,
    index,
    instancenorm2d,
    log,
    maxpool2x2,
    mean_all,
    mul,
    relu,
    reshape,
    scale,
    shift,
    sigmoid,
    sub,
    sum_all,
    tile_hw,
    upsample_nearest2x,
)
from app.tensor.optim import Adam, AdamState, adam_step
from app.tensor.tensor import ComputationGraph, GraphError, ShapeError, Tensor, backward, is_grad_enabled, no_grad

__all__ = [
    "Adam",
    "AdamState",
    "BatchNormState",
    "ComputationGraph",
    "GraphError",
    "ShapeError",
    "Tensor",
    "absolute",
    "adam_step",
    "add",
    "backward",
    "batchnorm2d",
    "clip",
    "concat",
    "conv2d",
    "div",
    "elementwise",
    "gather",
    "index",
    "instancenorm2d",
    "is_grad_enabled",
    "log",
    "maxpool2x2",
    "mean_all",
    "mul",
    "no_grad",
    "relu",
    "reshape",
    "scale",
    "shift",
    "sigmoid",
    "sub",
    "sum_all",
    "tile_hw",
    "upsample_nearest2x",
]
