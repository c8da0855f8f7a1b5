"""Keyed random streams.

Every draw is addressed by a tuple of non-negative integers (seed, step,
index, ...), so the same address always yields the same numbers no matter
which order or thread asks for them.
"""

from __future__ import annotations

import numpy as np
import torch


def derive_seed(*keys: int) -> int:
    ss = np.random.SeedSequence([int(k) for k in keys])
    return int(ss.generate_state(1, dtype=np.uint64)[0] & 0x7FFF_FFFF_FFFF_FFFF)


def torch_generator(*keys: int) -> torch.Generator:
    return torch.Generator().manual_seed(derive_seed(*keys))


def numpy_generator(*keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in keys]))


def normal(shape: tuple[int, ...], *keys: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    return torch.randn(shape, generator=torch_generator(*keys), dtype=dtype)


# Stream tags keep unrelated consumers of the same seed apart.
STREAM_SAMPLE_INIT = 1
STREAM_SAMPLE_STEP = 2
STREAM_TRAIN = 3
STREAM_PROMPT = 4
STREAM_INIT = 5
