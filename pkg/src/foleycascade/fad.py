"""Fréchet distance between Gaussian fits of clip embeddings, per sound class.

The embedding is a fixed log-mel statistic (per-band temporal mean and std),
reported under the label ``logmel-stats``; absolute values are not
comparable with VGGish-based FAD.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .audio_io import read_wav
from .dsp import DspConfig, Waveform, melspec
from .errors import DimensionError, InsufficientDataError, NumericalError
from .foundry import ManifestEntry, read_manifest
from .prompts import CLASS_DISPLAY, SOUND_CLASSES

log = logging.getLogger(__name__)

EMBEDDING_LABEL = "logmel-stats"
EIG_REJECT = -1e-6


def embed(w: Waveform, cfg: DspConfig) -> np.ndarray:
    values = melspec(w, cfg).values
    return np.concatenate([values.mean(axis=1), values.std(axis=1)])


@dataclass(frozen=True)
class GaussianStats:
    mu: np.ndarray
    sigma: np.ndarray
    count: int

    def __post_init__(self) -> None:
        d = self.mu.shape[0]
        if self.mu.ndim != 1 or self.sigma.shape != (d, d):
            raise DimensionError(f"inconsistent Gaussian stats: mu {self.mu.shape}, sigma {self.sigma.shape}")


def fit_gaussian(vectors: Sequence[np.ndarray] | np.ndarray) -> GaussianStats:
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InsufficientDataError(f"need at least 2 embedding vectors, got {x.shape[0] if x.ndim else 0}")
    if not np.isfinite(x).all():
        raise NumericalError("non-finite embedding")
    mu = x.mean(axis=0)
    centered = x - mu
    s = centered.T @ centered / (x.shape[0] - 1)
    return GaussianStats(mu, (s + s.T) / 2, x.shape[0])


def _psd_sqrt(m: np.ndarray, what: str) -> np.ndarray:
    vals, vecs = np.linalg.eigh((m + m.T) / 2)
    if vals.size and vals.min() < EIG_REJECT * max(1.0, abs(vals).max()):
        raise NumericalError(f"{what} is not positive semi-definite (min eigenvalue {vals.min():.3g})")
    return (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.T


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^1/2).

    The cross term uses Tr((S_a S_b)^1/2) = Tr((S_a^1/2 S_b S_a^1/2)^1/2),
    which stays in symmetric PSD matrices throughout.
    """
    if a.mu.shape != b.mu.shape:
        raise DimensionError(f"embedding dimensions differ: {a.mu.shape[0]} vs {b.mu.shape[0]}")
    root_a = _psd_sqrt(a.sigma, "sigma_a")
    inner = root_a @ b.sigma @ root_a
    vals = np.linalg.eigvalsh((inner + inner.T) / 2)
    scale = max(1.0, abs(vals).max()) if vals.size else 1.0
    if vals.size and vals.min() < EIG_REJECT * scale:
        raise NumericalError(f"cross-covariance product not PSD (min eigenvalue {vals.min():.3g})")
    cross = np.sqrt(np.clip(vals, 0, None)).sum()
    diff = a.mu - b.mu
    d = float(diff @ diff + np.trace(a.sigma) + np.trace(b.sigma) - 2 * cross)
    return max(d, 0.0)


# ---- per-class evaluation -------------------------------------------------------


@dataclass
class FadReport:
    rows: list[tuple[str, float | None]]
    average: float | None
    embedding: str = EMBEDDING_LABEL
    warnings: list[str] = field(default_factory=list)

    def as_dict(self) -> dict[str, float | None]:
        return dict(self.rows)

    def to_text(self) -> str:
        lines = [f"FAD ({self.embedding} embedding; not comparable to VGGish FAD)", f"{'Class':<16}{'FAD':>10}"]
        for cls, val in self.rows:
            lines.append(f"{CLASS_DISPLAY[cls]:<16}{'absent' if val is None else f'{val:.3f}':>10}")
        lines.append(f"{'Average':<16}{'n/a' if self.average is None else f'{self.average:.3f}':>10}")
        lines.extend(f"warning: {w}" for w in self.warnings)
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["class", "fad", "embedding"])
        for cls, val in self.rows:
            writer.writerow([cls, "" if val is None else f"{val:.6f}", self.embedding])
        writer.writerow(["average", "" if self.average is None else f"{self.average:.6f}", self.embedding])
        return buf.getvalue()


def _resolve(manifest: Path, entry: ManifestEntry) -> Path:
    p = Path(entry.path)
    if p.is_absolute():
        return p
    for base in (manifest.parent, manifest.parent.parent):
        if (base / p).exists():
            return base / p
    raise FileNotFoundError(f"{entry.path} (listed in {manifest}) not found")


def embed_manifest(path: str | Path, cfg: DspConfig) -> dict[str, list[np.ndarray]]:
    path = Path(path)
    by_class: dict[str, list[np.ndarray]] = {}
    for entry in read_manifest(path):
        by_class.setdefault(entry.sound_class, []).append(embed(read_wav(_resolve(path, entry)), cfg))
    return by_class


def fad_table(
    gen: dict[str, Sequence[np.ndarray]],
    ref: dict[str, Sequence[np.ndarray]],
    classes: Iterable[str] = SOUND_CLASSES,
) -> FadReport:
    rows: list[tuple[str, float | None]] = []
    warnings: list[str] = []
    for cls in classes:
        if len(gen.get(cls, ())) < 2 or len(ref.get(cls, ())) < 2:
            if cls in gen or cls in ref:
                side = "generated" if len(gen.get(cls, ())) < 2 else "reference"
                warnings.append(f"{cls}: fewer than 2 {side} clips; excluded from average")
            rows.append((cls, None))
            continue
        rows.append((cls, frechet_distance(fit_gaussian(gen[cls]), fit_gaussian(ref[cls]))))
    present = [v for _, v in rows if v is not None]
    for w in warnings:
        log.warning(w)
    return FadReport(rows, float(np.mean(present)) if present else None, warnings=warnings)


def evaluate(gen_manifest: str | Path, ref_manifest: str | Path, cfg: DspConfig) -> FadReport:
    return fad_table(embed_manifest(gen_manifest, cfg), embed_manifest(ref_manifest, cfg))


def cross_class_fad(gen: dict[str, Sequence[np.ndarray]], ref: dict[str, Sequence[np.ndarray]]) -> dict[tuple[str, str], float]:
    """FAD(gen_c, ref_c') for every pair of classes present on both sides."""
    out = {}
    for cg, vg in gen.items():
        for cr, vr in ref.items():
            out[(cg, cr)] = frechet_distance(fit_gaussian(vg), fit_gaussian(vr))
    return out
