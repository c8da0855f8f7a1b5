"""WAV (16-bit PCM mono) and spectrogram dump (CSV, 8-bit PGM) I/O."""

from __future__ import annotations

import wave
from pathlib import Path

import numpy as np

from .dsp import MelSpectrogram, Waveform

PCM_SCALE = 32767.0


def quantize(samples: np.ndarray) -> np.ndarray:
    return np.round(np.clip(samples, -1.0, 1.0) * PCM_SCALE).astype("<i2")


def write_wav(path: str | Path, w: Waveform) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(w.sample_rate))
        fh.writeframes(quantize(w.samples).tobytes())
    return path


def wav_bytes(w: Waveform) -> bytes:
    import io

    buf = io.BytesIO()
    with wave.open(buf, "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(w.sample_rate))
        fh.writeframes(quantize(w.samples).tobytes())
    return buf.getvalue()


def read_wav(path: str | Path) -> Waveform:
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1 or fh.getsampwidth() != 2:
            raise ValueError(f"{path}: only mono 16-bit PCM is supported")
        rate = fh.getframerate()
        data = np.frombuffer(fh.readframes(fh.getnframes()), dtype="<i2")
    return Waveform(data.astype(np.float64) / PCM_SCALE, rate)


def write_spectrogram_csv(path: str | Path, mel: MelSpectrogram | np.ndarray) -> Path:
    """One row per mel bin (lowest first), one column per frame."""
    values = mel.values if isinstance(mel, MelSpectrogram) else np.asarray(mel)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, values, delimiter=",", fmt="%.6f")
    return path


def write_pgm(path: str | Path, mel: MelSpectrogram | np.ndarray) -> Path:
    """Binary 8-bit PGM, min-max normalised, highest mel bin on the top row."""
    values = mel.values if isinstance(mel, MelSpectrogram) else np.asarray(mel)
    lo, hi = float(values.min()), float(values.max())
    scaled = np.zeros_like(values) if hi <= lo else (values - lo) / (hi - lo)
    img = np.round(scaled[::-1] * 255).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    path.write_bytes(header + img.tobytes())
    return path


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)
