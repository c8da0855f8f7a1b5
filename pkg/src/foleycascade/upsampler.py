"""Diffusion super-resolution from low-resolution to full mel spectrograms.

The only conditioning is the low-resolution input, nearest-upsampled and
concatenated to x_t as a second channel. There is no text pathway.

The diffused quantity is the residual ``full - nearest_up(lowres)`` times
``residual_scale``; the upsampled lowres is added back after sampling.
Without the residual the eps-predictor reads the coarse structure off x_t and
ignores the conditioning channel; without the scale the residual (std ~0.06)
is swamped by sampler error at high noise levels.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import torch
from torch import Tensor, nn

from . import rng as krng
from .diffusion import NoiseSchedule, SamplerConfig, sample_loop, training_loss
from .errors import ConfigError, DimensionError, InsufficientDataError, StateError
from .tensor import ops
from .training import TrainConfig, run_training
from .unet import UNet, seeded

PREFIX = "upsampler"


@dataclass(frozen=True)
class UpsamplerConfig:
    num_blocks: int = 3
    base_channels: int = 16
    lowres_shape: tuple[int, int] = (8, 32)
    target_shape: tuple[int, int] = (32, 128)
    convs_per_block: int = 2
    time_embed_dim: int = 64
    norm_groups: int = 8
    residual_scale: float = 16.0
    residual_clip: float = 0.5  # bound on |residual| in model space while sampling

    def __post_init__(self) -> None:
        self.factor
        if self.residual_scale <= 0 or self.residual_clip <= 0:
            raise ConfigError("residual_scale and residual_clip must be > 0")

    @property
    def factor(self) -> int:
        (lb, lf), (tb, tf) = self.lowres_shape, self.target_shape
        if tb % lb or tf % lf or tb // lb != tf // lf:
            raise ConfigError(
                f"lowres {self.lowres_shape} must divide target {self.target_shape} by one integer factor"
            )
        return tb // lb


PAPER_UPSAMPLER = UpsamplerConfig(
    num_blocks=4,
    base_channels=128,
    lowres_shape=(32, 128),
    target_shape=(128, 512),
    time_embed_dim=512,
    norm_groups=32,
)


class SpectrogramUpsampler(nn.Module):
    def __init__(self, cfg: UpsamplerConfig):
        super().__init__()
        self.cfg = cfg
        self.unet = UNet(
            cfg.target_shape,
            in_channels=2,
            base_channels=cfg.base_channels,
            num_blocks=cfg.num_blocks,
            convs_per_block=cfg.convs_per_block,
            groups=cfg.norm_groups,
            time_embed_dim=cfg.time_embed_dim,
            context_dim=None,
        )

    def forward(self, x_t: Tensor, t: Tensor, lowres: Tensor) -> Tensor:
        expect = (x_t.shape[0], 1, *self.cfg.lowres_shape)
        if tuple(lowres.shape) != expect:
            raise DimensionError(
                f"lowres conditioning {tuple(lowres.shape)} does not match x_t {tuple(x_t.shape)} "
                f"at factor {self.cfg.factor} (expected {expect})"
            )
        return self.unet(torch.cat([x_t, self.base(lowres)], dim=1), t)

    def base(self, lowres: Tensor) -> Tensor:
        return ops.upsample_nearest(lowres, self.cfg.factor)


def build(cfg: UpsamplerConfig, seed: int = 0) -> SpectrogramUpsampler:
    with seeded(seed):
        return SpectrogramUpsampler(cfg)


def train_stage(
    model: SpectrogramUpsampler,
    target: Tensor,
    lowres: Tensor,
    sched: NoiseSchedule,
    hp: TrainConfig,
    checkpoint: Path | None = None,
) -> list[float]:
    """Fit on model-space pairs: ``target [N,1,B,F]`` and its pooled ``lowres [N,1,B/k,F/k]``."""
    if target.shape[0] == 0:
        raise InsufficientDataError("upsampler stage needs a non-empty dataset")
    batch_rng = krng.numpy_generator(hp.seed, krng.STREAM_TRAIN, 10)
    gen = krng.torch_generator(hp.seed, krng.STREAM_TRAIN, 11)

    residual = (target - model.base(lowres)) * model.cfg.residual_scale

    def step_loss(step: int) -> Tensor:
        idx = batch_rng.integers(0, target.shape[0], size=hp.batch_size)
        return training_loss(model, residual[idx], lowres[idx], sched, gen, backward=False)

    return run_training(PREFIX, model, step_loss, hp, checkpoint)


@torch.no_grad()
def upsample(
    model: SpectrogramUpsampler | None,
    lowres: Tensor,
    sched: NoiseSchedule,
    sampler: SamplerConfig,
) -> Tensor:
    """Model-space ``[N,1,b,f]`` -> ``[N,1,B,F]``; deterministic per ``sampler.seed``."""
    if model is None:
        raise StateError("upsampler checkpoint not loaded")
    model.eval()
    shape = (lowres.shape[0], 1, *model.cfg.target_shape)
    cfg = model.cfg
    bounded = replace(sampler, clip_value=cfg.residual_clip * cfg.residual_scale)
    residual = sample_loop(model, shape, lowres, sched, bounded) / cfg.residual_scale
    # true residuals have zero mean over every factor x factor block; project onto that subspace
    residual = residual - model.base(torch.nn.functional.avg_pool2d(residual, cfg.factor))
    return model.base(lowres) + residual
