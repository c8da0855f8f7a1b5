"""Procedural foley dataset: seven sound classes, clean/noisy twins, manifests.

Every clip is addressed by (dataset seed, class index, clip id), so any
subset can be regenerated independently and the whole build is
byte-reproducible.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.signal import butter, sosfilt

from . import rng as krng
from .audio_io import read_wav, write_wav
from .dsp import DspConfig, Waveform, lowres_pool, melspec, peak_limit, peak_normalize
from .errors import ConfigError, NumericalError, StateError
from .prompts import SOUND_CLASSES, PromptCorpus, Quality, default_corpus

log = logging.getLogger(__name__)

CLIP_SECONDS = 4.096
CLIP_PEAK = 0.5
ROOM_TONE_STD = 1e-4
EXCLUDED_TAGS = frozenset({"speech", "music", "singing", "instrument"})
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class SynthFoleyParams:
    burst_rate_hz: float
    band_center_hz: float
    bandwidth_hz: float
    decay_s: float
    event_count: int
    noise_snr_db: float | None = None

    def validate(self, sample_rate: int) -> None:
        nyq = sample_rate / 2
        if self.burst_rate_hz <= 0 or self.decay_s <= 0 or self.event_count < 1 or self.bandwidth_hz <= 0:
            raise ConfigError(f"non-physical synthesis parameters: {self}")
        if self.band_center_hz + self.bandwidth_hz / 2 >= nyq or self.band_center_hz - self.bandwidth_hz / 2 <= 0:
            raise ConfigError(f"band {self.band_center_hz}±{self.bandwidth_hz / 2} Hz outside (0, {nyq}) Hz")


DEFAULT_PARAMS: dict[str, SynthFoleyParams] = {
    "dog_bark": SynthFoleyParams(1.2, 700.0, 500.0, 0.08, 4),
    "footstep": SynthFoleyParams(1.0, 300.0, 400.0, 0.02, 3),
    "gun_shot": SynthFoleyParams(0.5, 900.0, 1500.0, 0.35, 1),
    "keyboard": SynthFoleyParams(9.0, 1300.0, 800.0, 0.008, 36),
    "motor_vehicle": SynthFoleyParams(22.0, 160.0, 200.0, 1.0, 1),
    "rain": SynthFoleyParams(50.0, 1000.0, 1900.0, 1.0, 1),
    "sneeze_cough": SynthFoleyParams(0.7, 900.0, 900.0, 0.12, 2),
}


@dataclass
class ManifestEntry:
    path: str
    sound_class: str
    quality: str
    tags: list[str]
    duration: float
    clip_id: int = -1
    split: str = ""
    prompt: str = ""
    template: str = ""
    snr_db: float | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.duration <= 0:
            raise ValueError("duration must be positive")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "ManifestEntry":
        return cls(**json.loads(line))


# ---- procedural sound primitives -----------------------------------------------


def _band(x: np.ndarray, lo: float, hi: float, sr: int, order: int = 2) -> np.ndarray:
    nyq = sr / 2
    lo, hi = max(lo, 20.0), min(hi, nyq * 0.95)
    sos = butter(order, [lo / nyq, hi / nyq], btype="band", output="sos")
    return sosfilt(sos, x)


def _lowpass(x: np.ndarray, cutoff: float, sr: int) -> np.ndarray:
    sos = butter(2, min(cutoff, sr * 0.45) / (sr / 2), btype="low", output="sos")
    return sosfilt(sos, x)


def _highpass(x: np.ndarray, cutoff: float, sr: int) -> np.ndarray:
    sos = butter(2, cutoff / (sr / 2), btype="high", output="sos")
    return sosfilt(sos, x)


def _env(n: int, sr: int, attack: float, decay: float) -> np.ndarray:
    t = np.arange(n) / sr
    a = np.clip(t / max(attack, 1e-4), 0, 1)
    return a * np.exp(-np.maximum(t - attack, 0) / decay)


def _place(out: np.ndarray, event: np.ndarray, start: int) -> None:
    end = min(len(out), start + len(event))
    if start < end:
        out[start:end] += event[: end - start]


def _onsets(rng: np.random.Generator, count: int, n: int, sr: int, min_gap: float, margin: float = 0.1) -> list[int]:
    lo, hi = int(margin * sr), n - int(0.3 * sr)
    picks: list[int] = []
    for _ in range(count * 50):
        if len(picks) == count:
            break
        s = int(rng.integers(lo, hi))
        if all(abs(s - p) >= min_gap * sr for p in picks):
            picks.append(s)
    return sorted(picks)


def _dog_bark(p: SynthFoleyParams, rng, n, sr):
    out = np.zeros(n)
    count = int(rng.integers(max(1, p.event_count - 2), p.event_count + 1))
    for s in _onsets(rng, count, n, sr, 0.45):
        length = int(rng.uniform(0.15, 0.28) * sr)
        t = np.arange(length) / sr
        f0 = rng.uniform(0.35, 0.5) * p.band_center_hz
        tone = sum(np.sin(2 * np.pi * k * f0 * t * (1 - 0.3 * t)) / k for k in (1, 2, 3))
        noise = _band(rng.standard_normal(length), p.band_center_hz - p.bandwidth_hz / 2, p.band_center_hz + p.bandwidth_hz / 2, sr)
        burst = (0.6 * tone + 2.0 * noise) * _env(length, sr, 0.01, p.decay_s)
        _place(out, burst, s)
    return out


def _footstep(p, rng, n, sr):
    out = np.zeros(n)
    count = int(rng.integers(2, p.event_count + 2))
    for s in _onsets(rng, count, n, sr, 0.6):
        for k, gap in enumerate((0.0, rng.uniform(0.04, 0.07))):
            length = int(0.08 * sr)
            hit = _lowpass(rng.standard_normal(length), p.band_center_hz + p.bandwidth_hz / 2, sr)
            _place(out, (1.0 if k == 0 else 0.6) * hit * _env(length, sr, 0.002, p.decay_s), s + int(gap * sr))
    return out


def _gun_shot(p, rng, n, sr):
    out = np.zeros(n)
    s = int(rng.uniform(0.2, 1.0) * sr)
    crack = rng.standard_normal(int(0.006 * sr)) * 3.0
    tail_len = n - s
    tail = _lowpass(rng.standard_normal(tail_len), p.band_center_hz, sr) * _env(tail_len, sr, 0.003, p.decay_s * rng.uniform(0.8, 1.2))
    _place(out, tail, s)
    _place(out, crack, s)
    return out


def _keyboard(p, rng, n, sr):
    out = np.zeros(n)
    gaps = rng.uniform(0.06, 2.0 / p.burst_rate_hz - 0.06, size=int(p.burst_rate_hz * CLIP_SECONDS * 2))
    t = 0.05 + np.cumsum(gaps)
    for s in (t[t < CLIP_SECONDS - 0.05] * sr).astype(int):
        length = int(0.03 * sr)
        click = _band(rng.standard_normal(length), p.band_center_hz - p.bandwidth_hz / 2, p.band_center_hz + p.bandwidth_hz / 2, sr)
        _place(out, click * _env(length, sr, 0.001, p.decay_s) * rng.uniform(0.6, 1.0), s)
    return out


def _motor_vehicle(p, rng, n, sr):
    t = np.arange(n) / sr
    rate = p.burst_rate_hz * rng.uniform(0.8, 1.2)
    base = _band(rng.standard_normal(n), p.band_center_hz - p.bandwidth_hz / 2, p.band_center_hz + p.bandwidth_hz / 2, sr)
    am = 0.55 + 0.45 * np.sin(2 * np.pi * rate * t)
    hum = 0.3 * np.sin(2 * np.pi * rate * 2 * t + rng.uniform(0, 2 * np.pi))
    swell = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(0.1, 0.3) * t + rng.uniform(0, 2 * np.pi))
    return (base * am + hum * base.std()) * swell


def _rain(p, rng, n, sr):
    return rng.standard_normal(n) * rng.uniform(0.8, 1.2)


def _sneeze_cough(p, rng, n, sr):
    out = np.zeros(n)
    count = int(rng.integers(1, p.event_count + 2))
    for s in _onsets(rng, count, n, sr, 0.6):
        length = int(rng.uniform(0.15, 0.4) * sr)
        src = rng.standard_normal(length)
        f1, f2 = rng.uniform(0.6, 0.9) * p.band_center_hz, rng.uniform(1.3, 1.7) * p.band_center_hz
        voiced = _band(src, f1 - 100, f1 + 100, sr) * 2.0 + _band(src, f2 - 150, f2 + 150, sr) * 1.5 + 0.2 * src
        _place(out, voiced * _env(length, sr, 0.015, p.decay_s), s)
    return out


_SYNTHS = {
    "dog_bark": _dog_bark,
    "footstep": _footstep,
    "gun_shot": _gun_shot,
    "keyboard": _keyboard,
    "motor_vehicle": _motor_vehicle,
    "rain": _rain,
    "sneeze_cough": _sneeze_cough,
}


def clip_samples(sample_rate: int) -> int:
    return int(round(CLIP_SECONDS * sample_rate))


def synth_class_clip(
    sound_class: str,
    params: SynthFoleyParams | None,
    seed: int | tuple[int, ...],
    sample_rate: int = 4000,
) -> Waveform:
    """4.096 s clip with class-characteristic structure, peak-normalised to 0.5."""
    if sound_class not in _SYNTHS:
        raise KeyError(f"unknown sound class {sound_class!r}")
    params = params or DEFAULT_PARAMS[sound_class]
    params.validate(sample_rate)
    keys = seed if isinstance(seed, tuple) else (seed,)
    rng = krng.numpy_generator(*keys)
    n = clip_samples(sample_rate)
    x = _SYNTHS[sound_class](params, rng, n, sample_rate)
    x = peak_normalize(x, CLIP_PEAK) + ROOM_TONE_STD * rng.standard_normal(n)
    return Waveform(x, sample_rate)


def pink_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    """1/f power noise by spectral shaping of white Gaussian noise."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(len(spec), dtype=np.float64)
    f[0] = 1.0
    spec /= np.sqrt(f)
    spec[0] = 0.0
    x = np.fft.irfft(spec, n=n)
    return x / x.std()


def make_noisy_variant(clean: Waveform, snr_db: float, seed: int | tuple[int, ...]) -> Waveform:
    """clean + pink noise scaled so that P_clean / P_noise == 10**(snr_db/10)."""
    if not np.isfinite(snr_db):
        raise ConfigError(f"snr_db must be finite, got {snr_db}")
    p_sig = float(np.mean(clean.samples**2))
    if p_sig <= 0:
        raise NumericalError("SNR undefined for a silent clean signal")
    keys = seed if isinstance(seed, tuple) else (seed,)
    noise = pink_noise(len(clean.samples), krng.numpy_generator(*keys))
    noise *= np.sqrt(p_sig / 10 ** (snr_db / 10) / np.mean(noise**2))
    return Waveform(peak_limit(clean.samples + noise), clean.sample_rate)


def filter_manifest(entries: Iterable[ManifestEntry]) -> list[ManifestEntry]:
    """Drop entries whose tags mark speech or musical content; order preserved."""
    return [e for e in entries if not (EXCLUDED_TAGS & {t.lower() for t in e.tags})]


# ---- dataset build ---------------------------------------------------------------


@dataclass
class DatasetConfig:
    class_counts: dict[str, int] = field(default_factory=lambda: {c: 64 for c in SOUND_CLASSES})
    split_ratios: tuple[float, float, float] = (0.75, 0.125, 0.125)
    seed: int = 0
    snr_range_db: tuple[float, float] = (5.0, 15.0)

    def __post_init__(self) -> None:
        for c, k in self.class_counts.items():
            if c not in SOUND_CLASSES:
                raise ConfigError(f"unknown sound class {c!r}")
            if k < 1:
                raise ConfigError(f"class {c!r}: count must be >= 1")
        if abs(sum(self.split_ratios) - 1.0) > 1e-9 or min(self.split_ratios) < 0:
            raise ConfigError(f"split ratios must be non-negative and sum to 1: {self.split_ratios}")
        if self.snr_range_db[1] > 20 or self.snr_range_db[0] > self.snr_range_db[1]:
            raise ConfigError("noisy-variant SNR range must satisfy lo <= hi <= 20 dB")


def split_assignment(count: int, ratios: tuple[float, float, float], rng: np.random.Generator) -> dict[int, str]:
    order = rng.permutation(count)
    n_train = int(round(ratios[0] * count))
    n_val = int(round(ratios[1] * count))
    if count >= 3 and ratios[2] > 0:
        n_train = min(n_train, count - 2)
        n_val = max(1, min(n_val, count - n_train - 1))
    out = {}
    for rank, clip in enumerate(order):
        out[int(clip)] = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
    return out


def _render_clip(job: tuple) -> tuple[np.ndarray, np.ndarray, float]:
    sound_class, class_idx, clip_id, seed, sr, snr_range = job
    clean = synth_class_clip(sound_class, None, (seed, class_idx, clip_id), sr)
    snr = float(krng.numpy_generator(seed, class_idx, clip_id, 3).uniform(*snr_range))
    noisy = make_noisy_variant(clean, snr, (seed, class_idx, clip_id, 1))
    return clean.samples, noisy.samples, snr


def build_dataset(
    cfg: DatasetConfig,
    root: str | Path,
    dsp: DspConfig,
    lowres_factor: int = 4,
    corpus: PromptCorpus | None = None,
    workers: int = 1,
) -> dict[str, list[ManifestEntry]]:
    """Write audio, JSON-lines manifests and paired full/low-res log-mels under ``root``."""
    root = Path(root)
    corpus = corpus or default_corpus()
    jobs, meta = [], []
    for class_idx, sound_class in enumerate(SOUND_CLASSES):
        count = cfg.class_counts.get(sound_class, 0)
        if not count:
            continue
        splits = split_assignment(count, cfg.split_ratios, krng.numpy_generator(cfg.seed, class_idx, 1 << 20))
        for clip_id in range(count):
            jobs.append((sound_class, class_idx, clip_id, cfg.seed, dsp.sample_rate, cfg.snr_range_db))
            meta.append((sound_class, class_idx, clip_id, splits[clip_id]))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            rendered = list(pool.map(_render_clip, jobs))
    else:
        rendered = [_render_clip(j) for j in jobs]

    manifests: dict[str, list[ManifestEntry]] = {s: [] for s in SPLITS}
    mels: dict[str, list[np.ndarray]] = {s: [] for s in SPLITS}
    for (sound_class, class_idx, clip_id, split), (clean, noisy, snr) in zip(meta, rendered):
        template_rng = krng.numpy_generator(cfg.seed, class_idx, clip_id, 2)
        template = corpus.sample_prompt(sound_class, template_rng).raw_text
        for quality, samples, snr_db in ((Quality.CLEAN, clean, None), (Quality.NOISY, noisy, snr)):
            rel = Path("audio") / split / f"{sound_class}_{clip_id:04d}_{quality.value}.wav"
            try:
                write_wav(root / rel, Waveform(samples, dsp.sample_rate))
            except OSError as exc:
                raise OSError(f"failed to write {root / rel}: {exc}") from exc
            stored = read_wav(root / rel)
            mels[split].append(melspec(stored, dsp).values.astype(np.float32))
            record = corpus.record(sound_class, template, quality)
            manifests[split].append(
                ManifestEntry(
                    path=str(rel),
                    sound_class=sound_class,
                    quality=quality.value,
                    tags=[sound_class, f"{quality.value}_recording"],
                    duration=len(samples) / dsp.sample_rate,
                    clip_id=clip_id,
                    split=split,
                    prompt=record.text,
                    template=template,
                    snr_db=snr_db,
                    seed=cfg.seed,
                )
            )
    (root / "manifests").mkdir(parents=True, exist_ok=True)
    (root / "mels").mkdir(parents=True, exist_ok=True)
    for split in SPLITS:
        write_manifest(root / "manifests" / f"{split}.jsonl", manifests[split])
        full = np.stack(mels[split]) if mels[split] else np.zeros((0, dsp.mel_bins, 0), np.float32)
        np.save(root / "mels" / f"{split}_full.npy", full)
        low = lowres_pool(full, lowres_factor).astype(np.float32) if len(full) else full
        np.save(root / "mels" / f"{split}_lowres.npy", low)
    (root / "dataset.json").write_text(
        json.dumps(
            {"config": asdict(cfg), "dsp": asdict(dsp), "lowres_factor": lowres_factor},
            sort_keys=True,
            indent=2,
        )
    )
    log.info("dataset written to %s: %s", root, {k: len(v) for k, v in manifests.items()})
    return manifests


def write_manifest(path: str | Path, entries: Iterable[ManifestEntry]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(e.to_json() + "\n" for e in entries))
    return path


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    return [ManifestEntry.from_json(line) for line in Path(path).read_text().splitlines() if line.strip()]


@dataclass
class SplitData:
    entries: list[ManifestEntry]
    full: np.ndarray  # [N, bins, frames] raw log-mel
    lowres: np.ndarray


def load_split(root: str | Path, split: str) -> SplitData:
    root = Path(root)
    path = root / "manifests" / f"{split}.jsonl"
    if not path.exists():
        raise StateError(f"dataset split missing: {path} (run dataset-make first)")
    return SplitData(
        read_manifest(path),
        np.load(root / "mels" / f"{split}_full.npy"),
        np.load(root / "mels" / f"{split}_lowres.npy"),
    )
