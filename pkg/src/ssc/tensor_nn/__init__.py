"""Minimal dense-tensor reverse-mode autodiff and the residual filter nets."""

from .autograd import (
    Tensor,
    add,
    clamp,
    clamp_min,
    abs_,
    exp,
    log,
    mean,
    sum_,
    mul,
    sub,
    div,
    silu,
    round_ste,
    conv2d,
    depthwise_conv2d,
    pixel_shuffle,
    pixel_unshuffle,
    reflect_pad2d,
    crop2d,
    reshape,
    color_mix,
    block8_transform,
    laplace_interval_logp,
)
from .net import (
    FilterNet,
    MbConvParams,
    mbconv,
    filter_forward,
    count_params,
    count_macs_per_pixel,
    save_checkpoint,
    load_checkpoint,
)
from .optim import AdamState, adam_step

__all__ = [
    "Tensor",
    "add",
    "sub",
    "mul",
    "div",
    "abs_",
    "exp",
    "log",
    "mean",
    "sum_",
    "clamp",
    "clamp_min",
    "silu",
    "round_ste",
    "conv2d",
    "depthwise_conv2d",
    "pixel_shuffle",
    "pixel_unshuffle",
    "reflect_pad2d",
    "crop2d",
    "reshape",
    "color_mix",
    "block8_transform",
    "laplace_interval_logp",
    "FilterNet",
    "MbConvParams",
    "mbconv",
    "filter_forward",
    "count_params",
    "count_macs_per_pixel",
    "save_checkpoint",
    "load_checkpoint",
    "AdamState",
    "adam_step",
]
