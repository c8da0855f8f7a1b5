"""Learned mel-to-waveform inverter with residual FiLM conditioning.

Transposed-convolution upsampling stages (product of factors == hop), each
followed by dilated residual convolutions and a FiLM layer whose scale/shift
come from a small conv net over the input mel. Trained on spectral
reconstruction losses only; no discriminator.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import Tensor, nn

from . import rng as krng
from .dsp import DspConfig, MelSpectrogram, Waveform, hann, hz_to_mel, mel_filterbank, mel_to_hz, peak_limit
from .errors import ConfigError, DimensionError, InsufficientDataError, StateError
from .tensor import ops
from .tensor.layers import Conv1d, ConvTranspose1d
from .training import TrainConfig, run_training
from .unet import seeded

PREFIX = "inverter"
LEAKY_SLOPE = 0.1


@dataclass(frozen=True)
class InverterConfig:
    upsample_factors: tuple[int, ...] = (8, 4, 4)
    channels: tuple[int, ...] = (96, 48, 24, 16)
    num_residual_layers: int = 2
    film_hidden: int = 64
    stft_resolutions: tuple[int, ...] = (128, 256, 512)
    mel_loss_weight: float = 1.0
    tone_fraction: float = 0.25  # share of each training batch replaced by synthetic tone mixtures

    def __post_init__(self) -> None:
        if len(self.channels) != len(self.upsample_factors) + 1:
            raise ConfigError("channels needs one entry per stage plus the input width")
        if not 0.0 <= self.tone_fraction < 1.0:
            raise ConfigError("tone_fraction must lie in [0, 1)")

    @property
    def hop(self) -> int:
        return int(np.prod(self.upsample_factors))

    def check(self, dsp: DspConfig) -> None:
        if self.hop != dsp.hop_length:
            raise ConfigError(
                f"inverter upsample factors {self.upsample_factors} multiply to {self.hop}, "
                f"but hop_length is {dsp.hop_length}"
            )


def film(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """Residual FiLM: x + (gamma * x + beta).

    ``gamma``/``beta`` are ``[C]`` (one value per channel) or ``[N, C, L]``.
    """
    c = x.shape[1]
    if gamma.shape != beta.shape:
        raise DimensionError(f"FiLM gamma {tuple(gamma.shape)} and beta {tuple(beta.shape)} differ")
    if gamma.dim() == 1:
        if gamma.shape[0] != c:
            raise DimensionError(f"FiLM has {gamma.shape[0]} channels, features have {c}")
        gamma, beta = gamma[None, :, None], beta[None, :, None]
    elif gamma.shape[1] != c or gamma.shape[-1] not in (1, x.shape[-1]):
        raise DimensionError(f"FiLM params {tuple(gamma.shape)} do not fit features {tuple(x.shape)}")
    return x + (gamma * x + beta)


class FiLMNet(nn.Module):
    """Two conv layers over the mel, emitting per-frame gamma and beta."""

    def __init__(self, mel_bins: int, hidden: int, channels: int):
        super().__init__()
        self.conv1 = Conv1d(mel_bins, hidden, kernel=3)
        self.conv2 = Conv1d(hidden, 2 * channels, kernel=1)

    def forward(self, mel: Tensor, upsample: int) -> tuple[Tensor, Tensor]:
        h = self.conv2(ops.leaky_relu(self.conv1(mel), LEAKY_SLOPE))
        h = ops.upsample_nearest(h, upsample)
        gamma, beta = h.chunk(2, dim=1)
        return gamma, beta


class ResidualStack(nn.Module):
    def __init__(self, channels: int, layers: int, kernel: int = 3):
        super().__init__()
        self.convs = nn.ModuleList(Conv1d(channels, channels, kernel, dilation=3**i) for i in range(layers))

    def forward(self, x: Tensor) -> Tensor:
        for conv in self.convs:
            x = x + conv(ops.leaky_relu(x, LEAKY_SLOPE))
        return x


class MelInverter(nn.Module):
    def __init__(self, cfg: InverterConfig, dsp: DspConfig):
        super().__init__()
        cfg.check(dsp)
        self.cfg = cfg
        self.dsp = dsp
        ch = cfg.channels
        self.conv_pre = Conv1d(dsp.mel_bins, ch[0], kernel=7)
        self.ups = nn.ModuleList()
        self.res = nn.ModuleList()
        self.films = nn.ModuleList()
        for i, f in enumerate(cfg.upsample_factors):
            self.ups.append(ConvTranspose1d(ch[i], ch[i + 1], f))
            self.res.append(ResidualStack(ch[i + 1], cfg.num_residual_layers))
            self.films.append(FiLMNet(dsp.mel_bins, cfg.film_hidden, ch[i + 1]))
        self.conv_post = Conv1d(ch[-1], 1, kernel=7)

    def forward(self, mel: Tensor, use_film: bool = True) -> Tensor:
        """Model-space log-mel ``[N, mel_bins, frames]`` -> waveform ``[N, frames * hop]``."""
        if mel.dim() != 3 or mel.shape[1] != self.dsp.mel_bins:
            raise DimensionError(f"expected mel [N, {self.dsp.mel_bins}, frames], got {tuple(mel.shape)}")
        x = self.conv_pre(mel)
        scale = 1
        for up, res, fnet in zip(self.ups, self.res, self.films):
            x = res(up(ops.leaky_relu(x, LEAKY_SLOPE)))
            scale *= up.stride
            if use_film:
                gamma, beta = fnet(mel, scale)
                x = film(x, gamma, beta)
        x = self.conv_post(ops.leaky_relu(x, LEAKY_SLOPE))
        return torch.tanh(x[:, 0])


def build(cfg: InverterConfig, dsp: DspConfig, seed: int = 0) -> MelInverter:
    with seeded(seed):
        return MelInverter(cfg, dsp)


def normalize_log_mel(values, dsp: DspConfig):
    """Inverter input scaling: log-mel shifted/scaled to roughly unit range."""
    return (values - dsp.log_min / 2) / (-dsp.log_min / 2)


# ---- differentiable spectral features -------------------------------------


def torch_log_mel(wave: Tensor, dsp: DspConfig) -> Tensor:
    """Log-mel of ``[N, samples]`` matching :func:`foleycascade.dsp.melspec`."""
    p = dsp.frame_padding
    x = torch.nn.functional.pad(wave[:, None], (p, p), mode="reflect")[:, 0]
    window = torch.tensor(hann(dsp.window_length), dtype=wave.dtype)
    spec = torch.stft(
        x, dsp.fft_size, hop_length=dsp.hop_length, win_length=dsp.window_length,
        window=torch.nn.functional.pad(window, (0, dsp.fft_size - dsp.window_length)),
        center=False, return_complex=True,
    )
    mag = spec.abs()
    fb = torch.tensor(mel_filterbank(dsp), dtype=wave.dtype)
    return torch.log(torch.clamp(fb @ mag, min=dsp.log_floor))


def multi_resolution_stft_loss(pred: Tensor, target: Tensor, resolutions: tuple[int, ...]) -> Tensor:
    """Mean over resolutions of spectral convergence + L1 log-magnitude."""
    total = pred.new_zeros(())
    for n_fft in resolutions:
        window = torch.hann_window(n_fft, dtype=pred.dtype)
        kw = dict(n_fft=n_fft, hop_length=n_fft // 4, window=window, return_complex=True)
        sp = torch.stft(pred, **kw).abs().clamp_min(1e-7)
        st = torch.stft(target, **kw).abs().clamp_min(1e-7)
        sc = torch.linalg.norm(st - sp) / torch.linalg.norm(st).clamp_min(1e-7)
        mag = (torch.log(st) - torch.log(sp)).abs().mean()
        total = total + sc + mag
    return total / len(resolutions)


def inverter_loss(model: MelInverter, mel: Tensor, wave: Tensor, use_film: bool = True) -> tuple[Tensor, Tensor]:
    """Returns (total loss, multi-res STFT part). ``mel`` is raw log-mel."""
    pred = model(normalize_log_mel(mel, model.dsp), use_film=use_film)
    stft_part = multi_resolution_stft_loss(pred, wave, model.cfg.stft_resolutions)
    mel_part = (torch_log_mel(pred, model.dsp) - mel).abs().mean()
    return stft_part + model.cfg.mel_loss_weight * mel_part, stft_part


def tone_mixtures(n: int, length: int, dsp: DspConfig, rng: np.random.Generator) -> np.ndarray:
    """``n`` clips of 1-3 sinusoids, mel-uniform frequencies, log-uniform levels, linear fades."""
    t = np.arange(length) / dsp.sample_rate
    lo, hi = hz_to_mel(max(dsp.fmin, 40.0)), hz_to_mel(0.95 * dsp.fmax)
    out = np.zeros((n, length))
    for i in range(n):
        for _ in range(rng.integers(1, 4)):
            f = mel_to_hz(rng.uniform(lo, hi))
            amp = np.exp(rng.uniform(np.log(0.01), np.log(0.5)))
            out[i] += amp * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
        out[i] *= np.linspace(rng.uniform(0.2, 1.0), rng.uniform(0.2, 1.0), length)
    return np.stack([peak_limit(x, 0.9) for x in out])


def train_inverter(
    model: MelInverter,
    waves: Tensor,
    hp: TrainConfig,
    checkpoint: Path | None = None,
    crop_frames: int = 32,
) -> list[float]:
    """Fit on random hop-aligned crops of ``waves [N, samples]``.

    The conditioning mel of each crop is recomputed from the crop itself, so
    input and target always pair exactly. A ``tone_fraction`` share of each
    batch is synthetic tone mixtures, which keeps sparse harmonic mels in the
    training distribution.
    """
    if waves.shape[0] == 0:
        raise InsufficientDataError("inverter needs a non-empty dataset")
    hop = model.dsp.hop_length
    crop = crop_frames * hop
    if waves.shape[1] < crop:
        raise DimensionError(f"clips of {waves.shape[1]} samples are shorter than the {crop}-sample crop")
    batch_rng = krng.numpy_generator(hp.seed, krng.STREAM_TRAIN, 20)
    max_start = (waves.shape[1] - crop) // hop

    def step_loss(step: int) -> Tensor:
        idx = batch_rng.integers(0, waves.shape[0], size=hp.batch_size)
        starts = batch_rng.integers(0, max_start + 1, size=hp.batch_size) * hop
        batch = torch.stack([waves[i, s : s + crop] for i, s in zip(idx, starts)])
        n_tone = int(round(model.cfg.tone_fraction * hp.batch_size))
        if n_tone:
            batch[:n_tone] = torch.as_tensor(tone_mixtures(n_tone, crop, model.dsp, batch_rng), dtype=batch.dtype)
        with torch.no_grad():
            mel = torch_log_mel(batch, model.dsp)
        return inverter_loss(model, mel, batch)[0]

    return run_training(PREFIX, model, step_loss, hp, checkpoint)


@torch.no_grad()
def invert(model: MelInverter | None, mel: MelSpectrogram, use_film: bool = True) -> Waveform:
    if model is None:
        raise StateError("inverter checkpoint not loaded")
    if mel.config != model.dsp:
        raise ConfigError("mel spectrogram DSP config does not match the inverter's training config")
    model.eval()
    x = torch.as_tensor(normalize_log_mel(mel.values, model.dsp), dtype=torch.float32)[None]
    wave = model(x, use_film=use_film)[0].double().numpy()
    return Waveform(peak_limit(wave), model.dsp.sample_rate)


@torch.no_grad()
def invert_batch(model: MelInverter, mels: np.ndarray, use_film: bool = True) -> np.ndarray:
    model.eval()
    x = torch.as_tensor(normalize_log_mel(mels, model.dsp), dtype=torch.float32)
    out = model(x, use_film=use_film).double().numpy()
    return np.stack([peak_limit(w) for w in out])
