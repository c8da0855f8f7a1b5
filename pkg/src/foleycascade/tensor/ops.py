"""Differentiable primitives used by every network in the cascade.

All ops take and return ``torch.Tensor``; autograd supplies the reverse pass.
Each op validates shapes up front and refuses to hand back non-finite values.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import Tensor

from ..errors import ConfigError, DimensionError, NumericalError

GROUP_NORM_EPS = 1e-5


def check_finite(x: Tensor, where: str) -> Tensor:
    if x.device.type == "meta":
        return x
    # a single reduction propagates any NaN/Inf
    if not torch.isfinite(x.detach().sum()):
        if torch.isfinite(x).all():
            return x
        raise NumericalError(f"non-finite values produced by {where}")
    return x


def _shape(x: Tensor) -> tuple[int, ...]:
    return tuple(x.shape)


def conv2d(
    input: Tensor,
    kernel: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    if input.dim() != 4 or kernel.dim() != 4:
        raise DimensionError(f"conv2d expects 4-d input and kernel, got {_shape(input)} and {_shape(kernel)}")
    if input.shape[1] != kernel.shape[1]:
        raise DimensionError(
            f"conv2d channel mismatch: input {_shape(input)} vs kernel {_shape(kernel)}"
        )
    if stride < 1:
        raise ConfigError(f"conv2d stride must be >= 1, got {stride}")
    h, w = input.shape[2] + 2 * padding, input.shape[3] + 2 * padding
    if kernel.shape[2] > h or kernel.shape[3] > w:
        raise DimensionError(
            f"conv2d kernel {_shape(kernel)} larger than padded input {_shape(input)} (padding={padding})"
        )
    if bias is not None and bias.shape != (kernel.shape[0],):
        raise DimensionError(f"conv2d bias {_shape(bias)} does not match kernel {_shape(kernel)}")
    return check_finite(F.conv2d(input, kernel, bias, stride=stride, padding=padding), "conv2d")


def conv1d(
    input: Tensor,
    kernel: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
) -> Tensor:
    if input.dim() != 3 or kernel.dim() != 3 or input.shape[1] != kernel.shape[1]:
        raise DimensionError(f"conv1d shape mismatch: input {_shape(input)} vs kernel {_shape(kernel)}")
    span = dilation * (kernel.shape[2] - 1) + 1
    if span > input.shape[2] + 2 * padding:
        raise DimensionError(f"conv1d kernel {_shape(kernel)} larger than padded input {_shape(input)}")
    out = F.conv1d(input, kernel, bias, stride=stride, padding=padding, dilation=dilation)
    return check_finite(out, "conv1d")


def conv_transpose1d(
    input: Tensor,
    kernel: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    # kernel layout follows torch: [C_in, C_out, k]
    if input.dim() != 3 or kernel.dim() != 3 or input.shape[1] != kernel.shape[0]:
        raise DimensionError(
            f"conv_transpose1d shape mismatch: input {_shape(input)} vs kernel {_shape(kernel)}"
        )
    out = F.conv_transpose1d(input, kernel, bias, stride=stride, padding=padding)
    return check_finite(out, "conv_transpose1d")


def linear(input: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    if input.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear shape mismatch: input {_shape(input)} vs weight {_shape(weight)}")
    return check_finite(F.linear(input, weight, bias), "linear")


def group_norm(
    input: Tensor,
    groups: int,
    gain: Tensor | None = None,
    bias: Tensor | None = None,
    eps: float = GROUP_NORM_EPS,
) -> Tensor:
    """Normalise each group of channels to zero mean and unit variance, then apply ``gain``/``bias``.

    Works on any ``[N, C, ...]`` layout.
    """
    if input.dim() < 2:
        raise DimensionError(f"group_norm expects [N, C, ...], got {_shape(input)}")
    n, c = input.shape[:2]
    if groups < 1 or c % groups:
        raise ConfigError(f"group_norm: {c} channels not divisible into {groups} groups")
    x = F.group_norm(input, groups, gain, bias, eps)
    return check_finite(x, "group_norm")


def silu(input: Tensor) -> Tensor:
    """x * sigmoid(x)."""
    return F.silu(input)


def leaky_relu(input: Tensor, slope: float = 0.1) -> Tensor:
    return F.leaky_relu(input, slope)


def softmax(x: Tensor, dim: int = -1) -> Tensor:
    shifted = x - x.amax(dim=dim, keepdim=True).detach()
    e = torch.exp(shifted)
    return e / e.sum(dim=dim, keepdim=True)


def attention(
    query: Tensor,
    key: Tensor,
    value: Tensor,
    key_mask: Tensor | None = None,
    return_weights: bool = False,
) -> Tensor | tuple[Tensor, Tensor]:
    """Scaled dot-product attention, softmax(Q K^T / sqrt(D)) V.

    ``key_mask`` is a boolean ``[N, Tk]`` tensor, True for keys that may be
    attended to. Every query row must see at least one key.
    """
    if query.dim() != 3 or key.dim() != 3 or value.dim() != 3:
        raise DimensionError(
            f"attention expects 3-d tensors, got {_shape(query)}, {_shape(key)}, {_shape(value)}"
        )
    if query.shape[0] != key.shape[0] or key.shape[0] != value.shape[0]:
        raise DimensionError(f"attention batch mismatch: {_shape(query)}, {_shape(key)}, {_shape(value)}")
    if query.shape[2] != key.shape[2] or key.shape[1] != value.shape[1]:
        raise DimensionError(f"attention dim mismatch: {_shape(query)}, {_shape(key)}, {_shape(value)}")
    scores = query @ key.transpose(1, 2) / math.sqrt(query.shape[2])
    if key_mask is not None:
        if key_mask.shape != (key.shape[0], key.shape[1]):
            raise DimensionError(f"key_mask {_shape(key_mask)} does not match keys {_shape(key)}")
        scores = scores.masked_fill(~key_mask[:, None, :], float("-inf"))
    weights = softmax(scores, dim=-1)
    out = check_finite(weights @ value, "attention")
    if return_weights:
        return out, weights
    return out


def avg_pool2d(input: Tensor, factor: int) -> Tensor:
    if input.shape[-2] % factor or input.shape[-1] % factor:
        raise DimensionError(f"avg_pool2d: {_shape(input)} not divisible by {factor}")
    return F.avg_pool2d(input, factor)


def upsample_nearest(input: Tensor, factor: int) -> Tensor:
    if input.dim() == 4:
        return input.repeat_interleave(factor, dim=2).repeat_interleave(factor, dim=3)
    return input.repeat_interleave(factor, dim=-1)
