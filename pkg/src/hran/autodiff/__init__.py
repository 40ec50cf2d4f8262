from .gradcheck import GradCheckReport, analytic_gradients, finite_diff_check
from .ops import (
    add,
    channel_conv1d,
    channel_linear,
    concat_channels,
    conv2d,
    global_avg_pool,
    l1_loss,
    mul,
    mul_channelwise,
    pixel_shuffle,
    pixel_unshuffle_array,
    relu,
    scale,
    sigmoid,
    slice_channels,
    sub,
    sum_all,
    weight_norm,
)
from .tensor import DimensionError, NonFiniteError, Tape, Tensor, as_tensor

__all__ = [
    "DimensionError", "GradCheckReport", "NonFiniteError", "Tape", "Tensor",
    "add", "analytic_gradients", "as_tensor", "channel_conv1d", "channel_linear",
    "concat_channels", "conv2d", "finite_diff_check", "global_avg_pool", "l1_loss",
    "mul", "mul_channelwise", "pixel_shuffle", "pixel_unshuffle_array", "relu",
    "scale", "sigmoid", "slice_channels", "sub", "sum_all", "weight_norm",
]
