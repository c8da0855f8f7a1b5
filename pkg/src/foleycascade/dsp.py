"""STFT/iSTFT, mel filterbank, log-mel extraction and Griffin-Lim.

Everything here is plain numpy in float64. Spectrogram matrices are laid out
``[frequency, frames]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import get_window

from .errors import ConfigError, LengthError

COLA_TOL = 1e-9


@dataclass(frozen=True)
class DspConfig:
    sample_rate: int = 4000
    window_length: int = 512
    hop_length: int = 128
    fft_size: int = 512
    mel_bins: int = 32
    fmin: float = 0.0
    fmax: float = 2000.0
    log_floor: float = 1e-5

    def __post_init__(self) -> None:
        if not (0 < self.hop_length <= self.window_length <= self.fft_size):
            raise ConfigError(
                f"need 0 < hop_length <= window_length <= fft_size, got "
                f"{self.hop_length}, {self.window_length}, {self.fft_size}"
            )
        if not (0 <= self.fmin < self.fmax <= self.sample_rate / 2):
            raise ConfigError(f"need 0 <= fmin < fmax <= sample_rate/2, got {self.fmin}, {self.fmax}")
        if self.mel_bins < 1:
            raise ConfigError("mel_bins must be >= 1")
        if self.log_floor <= 0:
            raise ConfigError("log_floor must be positive")

    @property
    def n_freqs(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def frame_padding(self) -> int:
        """Samples of reflect padding per side so that frames == len // hop."""
        return (self.window_length - self.hop_length) // 2

    @property
    def log_min(self) -> float:
        return float(np.log(self.log_floor))

    def frames_for(self, num_samples: int) -> int:
        return 1 + (num_samples + 2 * self.frame_padding - self.window_length) // self.hop_length


def paper_dsp() -> DspConfig:
    # fft 1024 (window 512 zero-padded): with 512 bins the lowest HTK-mel
    # triangles fall between FFT bins and have empty support.
    return DspConfig(16000, 512, 128, 1024, 128, 0.0, 8000.0, 1e-5)


def desk_dsp() -> DspConfig:
    return DspConfig()


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise LengthError(f"waveform must be 1-d, got shape {self.samples.shape}")
        if not np.isfinite(self.samples).all():
            raise ValueError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class MelSpectrogram:
    values: np.ndarray  # [mel_bins, frames], natural log, floored
    config: DspConfig

    @property
    def frames(self) -> int:
        return self.values.shape[1]


def _samples(w: Waveform | np.ndarray) -> np.ndarray:
    return w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)


def peak_limit(x: np.ndarray, peak: float = 1.0) -> np.ndarray:
    """Scale down so that max |x| <= peak; quieter signals pass untouched."""
    m = np.max(np.abs(x)) if len(x) else 0.0
    return x * (peak / m) if m > peak else x


def peak_normalize(x: np.ndarray, peak: float) -> np.ndarray:
    m = np.max(np.abs(x)) if len(x) else 0.0
    return x * (peak / m) if m > 0 else x


@lru_cache(maxsize=16)
def hann(n: int) -> np.ndarray:
    w = get_window("hann", n, fftbins=True)
    w.setflags(write=False)
    return w


def cola_sum(cfg: DspConfig) -> np.ndarray:
    """One hop-period of sum_k w^2(n - k*hop)."""
    w2 = hann(cfg.window_length) ** 2
    total = np.zeros(cfg.hop_length)
    for start in range(0, cfg.window_length, cfg.hop_length):
        seg = w2[start : start + cfg.hop_length]
        total[: len(seg)] += seg
    return total


def check_cola(cfg: DspConfig) -> float:
    s = cola_sum(cfg)
    if cfg.window_length % cfg.hop_length or np.ptp(s) > COLA_TOL:
        raise ConfigError(
            f"window {cfg.window_length} / hop {cfg.hop_length} violates constant overlap-add "
            f"(ripple {np.ptp(s):.3g})"
        )
    return float(s[0])


def _frame(x: np.ndarray, cfg: DspConfig) -> np.ndarray:
    n = 1 + (len(x) - cfg.window_length) // cfg.hop_length
    idx = np.arange(cfg.window_length)[None, :] + cfg.hop_length * np.arange(n)[:, None]
    return x[idx]


def stft(w: Waveform | np.ndarray, cfg: DspConfig) -> np.ndarray:
    x = _samples(w)
    if len(x) < cfg.window_length:
        raise LengthError(f"signal of {len(x)} samples is shorter than one window ({cfg.window_length})")
    frames = _frame(x, cfg) * hann(cfg.window_length)
    return np.fft.rfft(frames, n=cfg.fft_size, axis=1).T


def _overlap_add(spec: np.ndarray, cfg: DspConfig) -> tuple[np.ndarray, np.ndarray]:
    n_frames = spec.shape[1]
    length = (n_frames - 1) * cfg.hop_length + cfg.window_length
    w = hann(cfg.window_length)
    chunks = np.fft.irfft(spec.T, n=cfg.fft_size, axis=1)[:, : cfg.window_length] * w
    out = np.zeros(length)
    norm = np.zeros(length)
    for m in range(n_frames):
        s = m * cfg.hop_length
        out[s : s + cfg.window_length] += chunks[m]
        norm[s : s + cfg.window_length] += w**2
    return out, norm


def istft(spec: np.ndarray, cfg: DspConfig) -> np.ndarray:
    """Least-squares inverse STFT (window-squared normalised overlap-add)."""
    check_cola(cfg)
    if spec.ndim != 2 or spec.shape[0] != cfg.n_freqs:
        raise LengthError(f"expected spectrogram with {cfg.n_freqs} rows, got {spec.shape}")
    out, norm = _overlap_add(spec, cfg)
    covered = norm > 1e-10
    out[covered] /= norm[covered]
    out[~covered] = 0.0
    return out


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(cfg: DspConfig) -> np.ndarray:
    pts = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.mel_bins + 2))
    return pts[1:-1]


@lru_cache(maxsize=16)
def mel_filterbank(cfg: DspConfig) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.mel_bins + 2))
    freqs = np.arange(cfg.n_freqs) * cfg.sample_rate / cfg.fft_size
    lo, ctr, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (ctr - lo)
    falling = (hi - freqs[None, :]) / (hi - ctr)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(fb.sum(axis=1) <= 0)
    if len(empty):
        raise ConfigError(
            f"{cfg.mel_bins} mel bins too many for fft_size {cfg.fft_size}: "
            f"filters {empty[:5].tolist()} have empty support"
        )
    fb.setflags(write=False)
    return fb


def _padded(x: np.ndarray, cfg: DspConfig) -> np.ndarray:
    p = cfg.frame_padding
    return np.pad(x, (p, p), mode="reflect") if p else x


def mel_magnitude(w: Waveform | np.ndarray, cfg: DspConfig) -> np.ndarray:
    x = _padded(_samples(w), cfg)
    return mel_filterbank(cfg) @ np.abs(stft(x, cfg))


def melspec(w: Waveform | np.ndarray, cfg: DspConfig) -> MelSpectrogram:
    """Natural-log mel magnitude, floored at ``log_floor``; ``len // hop`` frames."""
    mag = mel_magnitude(w, cfg)
    return MelSpectrogram(np.log(np.maximum(mag, cfg.log_floor)), cfg)


def mel_to_linear(mel: MelSpectrogram) -> np.ndarray:
    """Approximate linear magnitude from a log-mel matrix.

    Each band's average magnitude is spread back over its FFT bins through the
    transposed filterbank, normalised per FFT bin. Exact for flat spectra.
    """
    cfg = mel.config
    fb = mel_filterbank(cfg)
    mag = np.maximum(np.exp(mel.values) - cfg.log_floor, 0.0)
    band_avg = mag / fb.sum(axis=1, keepdims=True)
    col = fb.sum(axis=0)
    lin = fb.T @ band_avg
    nz = col > 0
    lin[nz] /= col[nz, None]
    lin[~nz] = 0.0
    return lin


def _spectral_weights(cfg: DspConfig) -> np.ndarray:
    # one-sided -> full-spectrum energy weights
    c = np.full(cfg.n_freqs, 2.0)
    c[0] = 1.0
    if cfg.fft_size % 2 == 0:
        c[-1] = 1.0
    return c


def spectral_distance(spec_mag: np.ndarray, target: np.ndarray, cfg: DspConfig) -> float:
    """Full-spectrum squared distance between two one-sided magnitude matrices."""
    return float((_spectral_weights(cfg)[:, None] * (spec_mag - target) ** 2).sum())


def griffin_lim(
    mel: MelSpectrogram,
    iterations: int,
    cfg: DspConfig | None = None,
    seed: int = 0,
    return_objective: bool = False,
) -> Waveform | tuple[Waveform, list[float]]:
    """Phase reconstruction from a log-mel matrix.

    Works on the padded signal domain so that every iterate is an exact
    least-squares projection; ``objective[i]`` is the full-spectrum distance
    between |STFT(x_i)| and the target magnitude and never increases.
    """
    cfg = cfg or mel.config
    if cfg != mel.config:
        raise ConfigError("mel spectrogram was computed with a different DspConfig")
    if iterations < 1:
        raise ConfigError("iterations must be >= 1")
    check_cola(cfg)
    target = mel_to_linear(mel)
    rng = np.random.default_rng(seed)
    phase = np.exp(2j * np.pi * rng.random(target.shape))
    x = istft(target * phase, cfg)
    objective = []
    for _ in range(iterations):
        spec = stft(x, cfg)
        mag = np.abs(spec)
        objective.append(spectral_distance(mag, target, cfg))
        unit = np.where(mag > 1e-12, spec / np.maximum(mag, 1e-12), 1.0)
        x = istft(target * unit, cfg)
    objective.append(spectral_distance(np.abs(stft(x, cfg)), target, cfg))
    p = cfg.frame_padding
    out = Waveform(peak_limit(x[p : p + mel.frames * cfg.hop_length]), cfg.sample_rate)
    if return_objective:
        return out, objective
    return out


def noise_floor(mel: MelSpectrogram | np.ndarray) -> float:
    """Median over frames of the per-frame minimum band log-energy."""
    v = mel.values if isinstance(mel, MelSpectrogram) else np.asarray(mel)
    return float(np.median(v.min(axis=0)))


def mel_l1(a: MelSpectrogram | np.ndarray, b: MelSpectrogram | np.ndarray) -> float:
    va = a.values if isinstance(a, MelSpectrogram) else a
    vb = b.values if isinstance(b, MelSpectrogram) else b
    if va.shape != vb.shape:
        raise LengthError(f"mel shapes differ: {va.shape} vs {vb.shape}")
    return float(np.mean(np.abs(va - vb)))


def lowres_pool(values: np.ndarray, factor: int) -> np.ndarray:
    """factor x factor average pooling over the last two axes."""
    *lead, b, f = values.shape
    if b % factor or f % factor:
        raise LengthError(f"shape {values.shape} not divisible by {factor}")
    v = values.reshape(*lead, b // factor, factor, f // factor, factor)
    return v.mean(axis=(-3, -1))


def model_space_range(cfg: DspConfig) -> tuple[float, float]:
    """Log-mel interval mapped onto [-1, 1] for the diffusion stages."""
    return cfg.log_min, float(np.log(cfg.window_length / 4))


def to_model_space(values, cfg: DspConfig):
    lo, hi = model_space_range(cfg)
    return 2.0 * (values - lo) / (hi - lo) - 1.0


def from_model_space(values, cfg: DspConfig):
    lo, hi = model_space_range(cfg)
    return (values + 1.0) * 0.5 * (hi - lo) + lo
