from .checkpoint import load_checkpoint, load_module, save_checkpoint, save_module
from .ops import (
    attention,
    check_finite,
    conv1d,
    conv2d,
    conv_transpose1d,
    group_norm,
    leaky_relu,
    linear,
    silu,
)
from .optim import Adam, AdamState, adam_step

__all__ = [
    "Adam",
    "AdamState",
    "adam_step",
    "attention",
    "check_finite",
    "conv1d",
    "conv2d",
    "conv_transpose1d",
    "group_norm",
    "leaky_relu",
    "linear",
    "load_checkpoint",
    "load_module",
    "save_checkpoint",
    "save_module",
    "silu",
]
