"""Text-conditioned low-resolution spectrogram generator."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import Tensor, nn

from . import rng as krng
from .dsp import lowres_pool
from .diffusion import NoiseSchedule, SamplerConfig, sample_loop, training_loss
from .errors import ConfigError, InsufficientDataError
from .prompts import NULL, PromptCorpus, PromptRecord
from .text_encoder import ConditioningBundle, TextEncoder, TokenBatch
from .training import TrainConfig, run_training
from .unet import UNet, channel_sequence, seeded

PREFIX = "lowres"


@dataclass(frozen=True)
class ArchitectureConfig:
    num_blocks: int = 3
    convs_per_block: int = 2
    base_channels: int = 16
    channel_growth: str = "linear"
    lowres_shape: tuple[int, int] = (8, 32)
    target_shape: tuple[int, int] = (32, 128)
    text_dim: int = 64
    time_embed_dim: int = 64
    norm_groups: int = 8
    text_layers: int = 2

    def __post_init__(self) -> None:
        if self.channel_growth != "linear":
            raise ConfigError(f"only linear channel growth is supported, got {self.channel_growth!r}")
        self.factor  # validates divisibility

    @property
    def factor(self) -> int:
        (lb, lf), (tb, tf) = self.lowres_shape, self.target_shape
        if tb % lb or tf % lf or tb // lb != tf // lf:
            raise ConfigError(
                f"lowres {self.lowres_shape} must divide target {self.target_shape} by one integer factor"
            )
        return tb // lb

    @property
    def channels(self) -> tuple[int, ...]:
        return channel_sequence(self.base_channels, self.num_blocks)


PAPER_ARCH = ArchitectureConfig(
    num_blocks=5,
    base_channels=192,
    lowres_shape=(32, 128),
    target_shape=(128, 512),
    text_dim=768,
    time_embed_dim=768,
    norm_groups=32,
)


class LowresGenerator(nn.Module):
    """Text encoder + U-Net; ``forward`` takes an already encoded bundle."""

    def __init__(self, cfg: ArchitectureConfig, vocab_size: int):
        super().__init__()
        self.cfg = cfg
        self.text_encoder = TextEncoder(vocab_size, cfg.text_dim, cfg.text_layers)
        self.unet = UNet(
            cfg.lowres_shape,
            in_channels=1,
            base_channels=cfg.base_channels,
            num_blocks=cfg.num_blocks,
            convs_per_block=cfg.convs_per_block,
            groups=cfg.norm_groups,
            time_embed_dim=cfg.time_embed_dim,
            context_dim=cfg.text_dim,
        )

    def encode(self, tokens: TokenBatch) -> ConditioningBundle:
        return self.text_encoder(tokens)

    def forward(self, x_t: Tensor, t: Tensor, cond: ConditioningBundle) -> Tensor:
        return self.unet(x_t, t, cond)

    def eps_from_tokens(self, x_t: Tensor, t: Tensor, tokens: TokenBatch) -> Tensor:
        return self.unet(x_t, t, self.encode(tokens))


def build(cfg: ArchitectureConfig, vocab_size: int, seed: int = 0) -> LowresGenerator:
    with seeded(seed):
        return LowresGenerator(cfg, vocab_size)


def stack_bundles(a: ConditioningBundle, b: ConditioningBundle) -> ConditioningBundle:
    width = max(a.text_tokens.shape[1], b.text_tokens.shape[1])

    def pad_tok(x: Tensor) -> Tensor:
        return torch.nn.functional.pad(x, (0, 0, 0, width - x.shape[1]))

    def pad_mask(m: Tensor) -> Tensor:
        return torch.nn.functional.pad(m, (0, width - m.shape[1]), value=False)

    return ConditioningBundle(
        torch.cat([pad_tok(a.text_tokens), pad_tok(b.text_tokens)]),
        torch.cat([a.pooled, b.pooled]),
        torch.cat([pad_mask(a.mask), pad_mask(b.mask)]),
        torch.cat([a.is_null, b.is_null]),
    )


def train_stage(
    model: LowresGenerator,
    lowres: Tensor,
    records: Sequence[PromptRecord],
    corpus: PromptCorpus,
    sched: NoiseSchedule,
    hp: TrainConfig,
    checkpoint: Path | None = None,
) -> list[float]:
    """Fit the epsilon-predictor on model-space lowres mels ``[N, 1, b, f]``."""
    if len(records) == 0 or lowres.shape[0] == 0:
        raise InsufficientDataError("low-resolution stage needs a non-empty dataset")
    if lowres.shape[0] != len(records):
        raise ConfigError(f"{lowres.shape[0]} spectrograms but {len(records)} prompt records")
    batch_rng = krng.numpy_generator(hp.seed, krng.STREAM_TRAIN, 0)
    gen = krng.torch_generator(hp.seed, krng.STREAM_TRAIN, 1)
    null_id = corpus.index[NULL]

    def step_loss(step: int) -> Tensor:
        idx = batch_rng.integers(0, lowres.shape[0], size=hp.batch_size)
        tokens = TokenBatch.from_records([records[i] for i in idx], corpus)
        keep = torch.rand(len(idx), generator=gen) >= hp.cond_dropout
        tokens = tokens.drop(keep, null_id)
        return training_loss(model.eps_from_tokens, lowres[idx], tokens, sched, gen, backward=False)

    return run_training(PREFIX, model, step_loss, hp, checkpoint)


@torch.no_grad()
def generate(
    model: LowresGenerator,
    records: Sequence[PromptRecord],
    corpus: PromptCorpus,
    sched: NoiseSchedule,
    sampler: SamplerConfig,
) -> Tensor:
    """Sample model-space lowres mels ``[N, 1, b, f]``, one per prompt record."""
    model.eval()
    n = len(records)
    cond = model.encode(TokenBatch.from_records(records, corpus))
    uncond = model.encode(TokenBatch.null(n, corpus))
    shape = (n, 1, *model.cfg.lowres_shape)
    return sample_loop(model, shape, cond, sched, sampler, uncond=uncond, combine_batch=stack_bundles)


def pool_lowres(full: np.ndarray | Tensor, factor: int):
    """factor x factor average pooling of ``[..., bins, frames]``."""
    if isinstance(full, Tensor):
        lead = full.shape[:-2]
        x = full.reshape(-1, 1, *full.shape[-2:])
        return torch.nn.functional.avg_pool2d(x, factor).reshape(*lead, full.shape[-2] // factor, full.shape[-1] // factor)
    return lowres_pool(full, factor)
