"""Parameter-holding wrappers around :mod:`.ops`."""

from __future__ import annotations

import math

import torch
from torch import Tensor, nn

from . import ops


def _uniform_(t: Tensor, fan_in: int) -> Tensor:
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return nn.init.uniform_(t, -bound, bound)


class Conv2d(nn.Module):
    def __init__(self, c_in: int, c_out: int, kernel: int = 3, stride: int = 1, padding: int | None = None, zero: bool = False):
        super().__init__()
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.weight = nn.Parameter(torch.empty(c_out, c_in, kernel, kernel))
        self.bias = nn.Parameter(torch.empty(c_out))
        fan_in = c_in * kernel * kernel
        if zero:
            nn.init.zeros_(self.weight)
            nn.init.zeros_(self.bias)
        else:
            _uniform_(self.weight, fan_in)
            _uniform_(self.bias, fan_in)

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class Conv1d(nn.Module):
    def __init__(self, c_in: int, c_out: int, kernel: int = 3, dilation: int = 1, zero: bool = False):
        super().__init__()
        self.dilation = dilation
        self.padding = dilation * (kernel - 1) // 2
        self.weight = nn.Parameter(torch.empty(c_out, c_in, kernel))
        self.bias = nn.Parameter(torch.empty(c_out))
        if zero:
            nn.init.zeros_(self.weight)
            nn.init.zeros_(self.bias)
        else:
            _uniform_(self.weight, c_in * kernel)
            _uniform_(self.bias, c_in * kernel)

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv1d(x, self.weight, self.bias, padding=self.padding, dilation=self.dilation)


class ConvTranspose1d(nn.Module):
    """Upsample by ``stride`` exactly: kernel 2*stride, padding stride/2."""

    def __init__(self, c_in: int, c_out: int, stride: int):
        super().__init__()
        if stride % 2:
            raise ValueError("transposed-conv stride must be even")
        self.stride = stride
        self.padding = stride // 2
        self.weight = nn.Parameter(torch.empty(c_in, c_out, 2 * stride))
        self.bias = nn.Parameter(torch.empty(c_out))
        _uniform_(self.weight, c_in * 2)
        _uniform_(self.bias, c_in * 2)

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv_transpose1d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Linear(nn.Module):
    def __init__(self, d_in: int, d_out: int, zero: bool = False):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(d_out, d_in))
        self.bias = nn.Parameter(torch.empty(d_out))
        if zero:
            nn.init.zeros_(self.weight)
            nn.init.zeros_(self.bias)
        else:
            _uniform_(self.weight, d_in)
            _uniform_(self.bias, d_in)

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class GroupNorm(nn.Module):
    def __init__(self, groups: int, channels: int):
        super().__init__()
        self.groups = groups
        self.gain = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x: Tensor) -> Tensor:
        return ops.group_norm(x, self.groups, self.gain, self.bias)


class LayerNorm(GroupNorm):
    """Normalisation over the last axis of ``[..., D]`` via a single group."""

    def __init__(self, dim: int):
        super().__init__(1, dim)

    def forward(self, x: Tensor) -> Tensor:
        flat = x.reshape(-1, x.shape[-1])
        return ops.group_norm(flat, 1, self.gain, self.bias).reshape(x.shape)
