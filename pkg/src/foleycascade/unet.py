"""U-Net epsilon-predictor shared by the low-resolution and upsampling stages.

Encoder of ``num_blocks`` residual blocks, each followed by a stride-2
downsample; a middle block; and a mirrored decoder with skip connections.
Channel widths grow linearly, ``base * (i + 1)``. With a text context the net
cross-attends at the two deepest resolutions.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import torch
from torch import Tensor, nn

from .errors import ConfigError, DimensionError, NumericalError
from .tensor import ops
from .tensor.layers import Conv2d, GroupNorm, Linear
from .text_encoder import ConditioningBundle


def channel_sequence(base: int, num_blocks: int) -> tuple[int, ...]:
    return tuple(base * (i + 1) for i in range(num_blocks))


def timestep_embedding(t: Tensor, dim: int, max_period: float = 10000.0) -> Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float32, device=t.device) / half)
    args = t.to(torch.float32)[:, None] * freqs[None]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, temb_dim: int, groups: int, convs: int = 2):
        super().__init__()
        if convs < 1:
            raise ConfigError("convs_per_block must be >= 1")
        self.norms = nn.ModuleList([GroupNorm(groups, c_in)] + [GroupNorm(groups, c_out) for _ in range(convs - 1)])
        self.convs = nn.ModuleList(
            [Conv2d(c_in, c_out)] + [Conv2d(c_out, c_out) for _ in range(convs - 1)]
        )
        self.temb = Linear(temb_dim, c_out)
        self.skip = Conv2d(c_in, c_out, kernel=1) if c_in != c_out else None

    def forward(self, x: Tensor, temb: Tensor) -> Tensor:
        h = self.convs[0](ops.silu(self.norms[0](x)))
        h = h + self.temb(ops.silu(temb))[:, :, None, None]
        for norm, conv in zip(self.norms[1:], self.convs[1:]):
            h = conv(ops.silu(norm(h)))
        return (x if self.skip is None else self.skip(x)) + h


class CrossAttention(nn.Module):
    def __init__(self, channels: int, context_dim: int, groups: int, attn_dim: int = 64):
        super().__init__()
        self.norm = GroupNorm(groups, channels)
        self.q = Linear(channels, attn_dim)
        self.k = Linear(context_dim, attn_dim)
        self.v = Linear(context_dim, attn_dim)
        self.out = Linear(attn_dim, channels)

    def forward(self, x: Tensor, ctx: ConditioningBundle) -> Tensor:
        n, c, h, w = x.shape
        q = self.q(self.norm(x).reshape(n, c, h * w).transpose(1, 2))
        a = ops.attention(q, self.k(ctx.text_tokens), self.v(ctx.text_tokens), key_mask=ctx.mask)
        return x + self.out(a).transpose(1, 2).reshape(n, c, h, w)


class Downsample(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = Conv2d(channels, channels, kernel=3, stride=2, padding=1)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = Conv2d(channels, channels)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(ops.upsample_nearest(x, 2))


class UNet(nn.Module):
    def __init__(
        self,
        shape: tuple[int, int],
        in_channels: int = 1,
        base_channels: int = 16,
        num_blocks: int = 3,
        convs_per_block: int = 2,
        groups: int = 8,
        time_embed_dim: int = 64,
        context_dim: int | None = None,
    ):
        super().__init__()
        factor = 2**num_blocks
        if shape[0] % factor or shape[1] % factor:
            raise ConfigError(f"shape {shape} not divisible by 2**num_blocks = {factor}")
        self.shape = tuple(shape)
        self.in_channels = in_channels
        self.base_channels = base_channels
        self.context_dim = context_dim
        ch = channel_sequence(base_channels, num_blocks)
        widths = set(ch) | {2 * ch[-1]} | {a + b for a, b in zip(ch, ch[1:])}
        for c in sorted(widths):
            if c % groups:
                raise ConfigError(f"{c} channels not divisible into {groups} norm groups")
        self.channels = ch
        self.time_embed_dim = time_embed_dim
        self.time_in = Linear(base_channels, time_embed_dim)
        self.time_out = Linear(time_embed_dim, time_embed_dim)
        self.pooled_proj = Linear(context_dim, time_embed_dim) if context_dim else None
        self.conv_in = Conv2d(in_channels, ch[0])
        attn_levels = {num_blocks - 1} if context_dim else set()

        def attn(c: int) -> nn.Module:
            return CrossAttention(c, context_dim, groups) if context_dim else nn.Identity()

        self.enc = nn.ModuleList()
        self.enc_attn = nn.ModuleList()
        self.down = nn.ModuleList()
        prev = ch[0]
        for i, c in enumerate(ch):
            self.enc.append(ResBlock(prev, c, time_embed_dim, groups, convs_per_block))
            self.enc_attn.append(attn(c) if i in attn_levels else nn.Identity())
            self.down.append(Downsample(c))
            prev = c
        self.mid1 = ResBlock(prev, prev, time_embed_dim, groups, convs_per_block)
        self.mid_attn = attn(prev)
        self.mid2 = ResBlock(prev, prev, time_embed_dim, groups, convs_per_block)
        self.up = nn.ModuleList()
        self.dec = nn.ModuleList()
        self.dec_attn = nn.ModuleList()
        for i in reversed(range(num_blocks)):
            self.up.append(Upsample(prev))
            self.dec.append(ResBlock(prev + ch[i], ch[i], time_embed_dim, groups, convs_per_block))
            self.dec_attn.append(attn(ch[i]) if i in attn_levels else nn.Identity())
            prev = ch[i]
        self.norm_out = GroupNorm(groups, prev)
        self.conv_out = Conv2d(prev, 1)

    def _embed(self, t: Tensor, ctx: ConditioningBundle | None, n: int) -> Tensor:
        t = torch.as_tensor(t, dtype=torch.long, device=self.time_in.weight.device).reshape(-1)
        if t.numel() == 1:
            t = t.expand(n)
        emb = self.time_out(ops.silu(self.time_in(timestep_embedding(t, self.base_channels).to(self.time_in.weight.dtype))))
        if self.pooled_proj is not None and ctx is not None:
            emb = emb + self.pooled_proj(ctx.pooled)
        return emb

    def forward(self, x: Tensor, t: Tensor, ctx: ConditioningBundle | None = None) -> Tensor:
        if x.dim() != 4 or x.shape[1] != self.in_channels or tuple(x.shape[2:]) != self.shape:
            raise DimensionError(
                f"expected input [N, {self.in_channels}, {self.shape[0]}, {self.shape[1]}], got {tuple(x.shape)}"
            )
        if self.context_dim and ctx is None:
            raise DimensionError("text-conditioned U-Net called without conditioning")
        emb = self._embed(t, ctx, x.shape[0])

        def run(name: str, fn, *args):
            try:
                return fn(*args)
            except NumericalError as exc:
                raise NumericalError(f"non-finite activation in {name}: {exc}") from exc

        def apply_attn(mod: nn.Module, h: Tensor) -> Tensor:
            return h if isinstance(mod, nn.Identity) else mod(h, ctx)

        h = run("conv_in", self.conv_in, x)
        skips = []
        for i, (block, at, down) in enumerate(zip(self.enc, self.enc_attn, self.down)):
            h = run(f"encoder block {i}", lambda h: apply_attn(at, block(h, emb)), h)
            skips.append(h)
            h = run(f"encoder downsample {i}", down, h)
        h = run("middle block", lambda h: self.mid2(apply_attn(self.mid_attn, self.mid1(h, emb)), emb), h)
        for j, (up, block, at) in enumerate(zip(self.up, self.dec, self.dec_attn)):
            h = run(f"decoder upsample {j}", up, h)
            h = run(f"decoder block {j}", lambda h: apply_attn(at, block(torch.cat([h, skips.pop()], 1), emb)), h)
        return run("output head", lambda h: self.conv_out(ops.silu(self.norm_out(h))), h)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def conv_parameter_count(module: nn.Module) -> int:
    return sum(m.weight.numel() for m in module.modules() if isinstance(m, Conv2d))


@contextmanager
def seeded(seed: int):
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        yield
