"""DDPM maths shared by the low-resolution generator and the upsampler."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np
import torch
from torch import Tensor

from . import rng as krng
from .errors import ConfigError, DimensionError, NumericalError

EpsModel = Callable[[Tensor, Tensor, Any], Tensor]


@dataclass
class NoiseSchedule:
    """Per-step coefficients, stored 0-based: ``beta[t-1]`` is beta_t for t in 1..T."""

    beta: np.ndarray
    timesteps: np.ndarray | None = None  # original step index for respaced schedules

    def __post_init__(self) -> None:
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.timesteps is None:
            self.timesteps = np.arange(1, len(self.beta) + 1)
        if not ((self.beta > 0) & (self.beta < 1)).all():
            raise ConfigError("every beta_t must lie in (0, 1)")
        if np.any(np.diff(self.alpha_bar) >= 0):
            raise ConfigError("alpha_bar must be strictly decreasing")

    @property
    def T(self) -> int:
        return len(self.beta)

    @property
    def alpha(self) -> np.ndarray:
        return 1.0 - self.beta

    @property
    def alpha_bar(self) -> np.ndarray:
        return np.cumprod(1.0 - self.beta)

    @property
    def fully_corrupting(self) -> bool:
        return bool(self.alpha_bar[-1] < 0.05)

    def alpha_bar_at(self, t: int) -> float:
        """alpha_bar_t with the convention alpha_bar_0 = 1."""
        if not 0 <= t <= self.T:
            raise IndexError(f"step {t} outside 0..{self.T}")
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])

    def posterior_variance(self, t: int) -> float:
        """beta-tilde_t = (1 - abar_{t-1}) / (1 - abar_t) * beta_t."""
        return (1.0 - self.alpha_bar_at(t - 1)) / (1.0 - self.alpha_bar_at(t)) * float(self.beta[t - 1])


def make_schedule(
    kind: str,
    T: int,
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
    cosine_offset: float = 0.008,
) -> NoiseSchedule:
    if T < 2:
        raise ConfigError(f"schedule needs at least 2 steps, got {T}")
    if kind == "linear":
        return NoiseSchedule(np.linspace(beta_start, beta_end, T))
    if kind == "cosine":
        s = np.arange(T + 1) / T
        f = np.cos((s + cosine_offset) / (1 + cosine_offset) * math.pi / 2) ** 2
        abar = f / f[0]
        beta = np.clip(1.0 - abar[1:] / abar[:-1], 1e-8, 0.999)
        return NoiseSchedule(beta)
    raise ConfigError(f"unknown schedule kind {kind!r}")


def respace(sched: NoiseSchedule, steps: int) -> NoiseSchedule:
    """Ancestral schedule over an evenly spaced subset of the original steps."""
    if not 1 <= steps <= sched.T:
        raise ConfigError(f"steps_used must be in 1..{sched.T}, got {steps}")
    if steps == sched.T:
        return sched
    keep = np.unique(np.round(np.linspace(1, sched.T, steps)).astype(int))
    abar = np.array([sched.alpha_bar_at(int(t)) for t in keep])
    prev = np.concatenate([[1.0], abar[:-1]])
    return NoiseSchedule(1.0 - abar / prev, timesteps=keep)


def _coef(values: np.ndarray, t: Tensor, ndim: int) -> Tensor:
    out = torch.as_tensor(values, dtype=torch.float32)[t]
    return out.reshape(-1, *([1] * (ndim - 1)))


def q_sample(x0: Tensor, t: int | Tensor, eps: Tensor, sched: NoiseSchedule) -> Tensor:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps; t is 1-based (t=0 returns x0)."""
    if eps.shape != x0.shape:
        raise DimensionError(f"eps {tuple(eps.shape)} does not match x0 {tuple(x0.shape)}")
    tt = torch.as_tensor(t, dtype=torch.long).reshape(-1)
    if (tt < 0).any() or (tt > sched.T).any():
        raise IndexError(f"step index outside 0..{sched.T}: {tt.tolist()}")
    abar = np.concatenate([[1.0], sched.alpha_bar])
    if tt.numel() == 1:
        a = float(abar[int(tt)])
        return math.sqrt(a) * x0 + math.sqrt(1.0 - a) * eps
    if tt.numel() != x0.shape[0]:
        raise DimensionError(f"{tt.numel()} step indices for batch of {x0.shape[0]}")
    a = _coef(abar, tt, x0.dim())
    return a.sqrt() * x0 + (1.0 - a).sqrt() * eps


def training_loss(
    model: EpsModel,
    x0: Tensor,
    cond: Any,
    sched: NoiseSchedule,
    generator: torch.Generator,
    backward: bool = True,
) -> Tensor:
    """Monte-Carlo estimate of E||eps - eps_hat(x_t, t, cond)||^2 (mean per element)."""
    n = x0.shape[0]
    t = torch.randint(1, sched.T + 1, (n,), generator=generator)
    eps = torch.randn(x0.shape, generator=generator)
    x_t = q_sample(x0, t, eps, sched)
    eps_hat = model(x_t, t, cond)
    if eps_hat.shape != eps.shape:
        raise DimensionError(f"model returned {tuple(eps_hat.shape)}, expected {tuple(eps.shape)}")
    loss = ((eps - eps_hat) ** 2).mean()
    if not torch.isfinite(loss):
        raise NumericalError("non-finite diffusion training loss")
    if backward:
        loss.backward()
    return loss


def cfg_combine(eps_cond: Tensor, eps_uncond: Tensor, w: float) -> Tensor:
    """Guided noise estimate eps_u + w (eps_c - eps_u), written so w in {0, 1} is exact."""
    if eps_cond.shape != eps_uncond.shape:
        raise DimensionError(
            f"cfg_combine shapes differ: {tuple(eps_cond.shape)} vs {tuple(eps_uncond.shape)}"
        )
    return w * eps_cond + (1.0 - w) * eps_uncond


@dataclass
class SamplerConfig:
    guidance_scale: float = 1.0
    seed: int = 0
    steps_used: int | None = None
    clip_denoised: bool = True
    clip_value: float = 1.0  # predicted x0 is clamped to [-clip_value, clip_value]

    def __post_init__(self) -> None:
        if self.guidance_scale < 0:
            raise ConfigError("guidance_scale must be >= 0")
        if self.clip_value <= 0:
            raise ConfigError("clip_value must be > 0")
        if self.steps_used is not None and self.steps_used < 1:
            raise ConfigError("steps_used must be >= 1")


def keyed_noise(shape: tuple[int, ...], seed: int, *keys: int) -> Tensor:
    """One independent stream per batch row, addressed by (seed, *keys, row)."""
    rows = [krng.normal(tuple(shape[1:]), seed, *keys, i) for i in range(shape[0])]
    return torch.stack(rows)


@torch.no_grad()
def sample_loop(
    model: EpsModel,
    shape: tuple[int, ...],
    cond: Any,
    sched: NoiseSchedule,
    sampler: SamplerConfig,
    uncond: Any = None,
    combine_batch: Callable[[Any, Any], Any] | None = None,
) -> Tensor:
    """Ancestral DDPM sampling from x_T ~ N(0, I) down to x_0.

    With ``uncond`` given and guidance_scale != 1, the conditional and
    unconditional branches are evaluated in one stacked batch and blended by
    :func:`cfg_combine`. ``combine_batch(cond, uncond)`` stacks conditioning.
    """
    steps = sampler.steps_used or sched.T
    sub = respace(sched, steps)
    guided = uncond is not None and sampler.guidance_scale != 1.0
    if guided and combine_batch is None:
        raise ConfigError("guided sampling needs combine_batch")
    stacked = combine_batch(cond, uncond) if guided else cond
    x = keyed_noise(shape, sampler.seed, krng.STREAM_SAMPLE_INIT)
    n = shape[0]
    for i in range(sub.T, 0, -1):
        t_model = torch.full((n,), int(sub.timesteps[i - 1]), dtype=torch.long)
        if guided:
            eps_both = model(torch.cat([x, x]), torch.cat([t_model, t_model]), stacked)
            eps = cfg_combine(eps_both[:n], eps_both[n:], sampler.guidance_scale)
        else:
            eps = model(x, t_model, stacked)
        if eps.shape != x.shape:
            raise DimensionError(f"model returned {tuple(eps.shape)}, expected {tuple(x.shape)}")
        abar_t = sub.alpha_bar_at(i)
        abar_prev = sub.alpha_bar_at(i - 1)
        beta_t = float(sub.beta[i - 1])
        x0 = (x - math.sqrt(1 - abar_t) * eps) / math.sqrt(abar_t)
        if sampler.clip_denoised:
            x0 = x0.clamp(-sampler.clip_value, sampler.clip_value)
        mean = (math.sqrt(abar_prev) * beta_t / (1 - abar_t)) * x0 + (
            math.sqrt(1 - beta_t) * (1 - abar_prev) / (1 - abar_t)
        ) * x
        if i > 1:
            z = keyed_noise(shape, sampler.seed, krng.STREAM_SAMPLE_STEP, i)
            x = mean + math.sqrt(sub.posterior_variance(i)) * z
        else:
            x = mean
        if not torch.isfinite(x).all():
            raise NumericalError(f"non-finite sample at step {i}")
    return x
