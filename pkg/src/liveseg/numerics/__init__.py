"""Minimal dense-tensor arithmetic with reverse-mode differentiation."""

from liveseg.numerics.tensor import (
    Tensor,
    GradientTape,
    as_tensor,
    active_tape,
    backward,
    gradients,
)
from liveseg.numerics.ops import (
    add,
    sub,
    mul,
    div,
    scale,
    power,
    reshape,
    transpose,
    concat,
    slice_,
    gelu,
    sigmoid,
    log,
    softmax,
    reduce_sum,
    reduce_mean,
    matmul,
    attention,
    linear,
    stop_gradient,
    layer_norm,
    group_norm,
    max_pool,
    adaptive_avg_pool,
    bilinear_resize,
    conv2d,
    depthwise_conv2d,
    upconv2x,
    embed,
)

__all__ = [
    "Tensor", "GradientTape", "as_tensor", "active_tape", "backward", "gradients",
    "add", "sub", "mul", "div", "scale", "power", "reshape", "transpose", "concat",
    "slice_", "gelu", "sigmoid", "log", "softmax", "reduce_sum", "reduce_mean",
    "matmul", "attention", "linear", "stop_gradient", "layer_norm", "group_norm",
    "max_pool", "adaptive_avg_pool", "bilinear_resize", "conv2d", "depthwise_conv2d",
    "upconv2x", "embed",
]
