"""End-to-end orchestration: train the three stages, generate, steering statistics."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from scipy.stats import mannwhitneyu

from . import inverter as inv
from . import lowres, upsampler
from . import rng as krng
from .audio_io import read_wav, write_pgm, write_wav
from .config import RunConfig, to_ini
from .diffusion import SamplerConfig
from .dsp import MelSpectrogram, Waveform, from_model_space, melspec, noise_floor, to_model_space
from .errors import ConfigError, StateError
from .foundry import ManifestEntry, load_split, write_manifest
from .prompts import Quality, PromptCorpus, PromptRecord, SOUND_CLASSES, default_corpus
from .tensor.checkpoint import file_sha256, load_module
from .training import write_loss_log

log = logging.getLogger(__name__)

STAGES = ("lowres", "upsampler", "inverter")


@dataclass
class GenerationRequest:
    sound_class: str | None = None
    prompt: str | None = None
    quality: Quality | str = Quality.CLEAN
    num_samples: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        self.quality = Quality(self.quality)
        if self.num_samples < 1:
            raise ConfigError("num_samples must be >= 1")
        if (self.sound_class is None) == (self.prompt is None):
            raise ConfigError("give exactly one of sound_class or prompt")
        if self.sound_class is not None and self.sound_class not in SOUND_CLASSES:
            raise ConfigError(f"unknown sound class {self.sound_class!r}")


@dataclass
class Cascade:
    cfg: RunConfig
    corpus: PromptCorpus
    lowres: lowres.LowresGenerator
    upsampler: upsampler.SpectrogramUpsampler
    inverter: inv.MelInverter
    hashes: dict[str, str]


@dataclass
class GenerationResult:
    waveforms: list[Waveform]
    records: list[PromptRecord]
    provenance: list[dict]
    paths: list[Path] = field(default_factory=list)
    mels: list[MelSpectrogram] = field(default_factory=list)


def _new_model(stage: str, cfg: RunConfig, corpus: PromptCorpus):
    if stage == "lowres":
        return lowres.build(cfg.lowres, corpus.vocab_size, cfg.seed)
    if stage == "upsampler":
        return upsampler.build(cfg.upsampler, cfg.seed)
    return inv.build(cfg.inverter, cfg.dsp, cfg.seed)


def load_cascade(cfg: RunConfig, corpus: PromptCorpus | None = None) -> Cascade:
    cfg.validate()
    corpus = corpus or default_corpus()
    models, hashes = {}, {}
    for stage in STAGES:
        path = cfg.checkpoint(stage)
        if not path.exists():
            raise StateError(f"missing {stage} checkpoint at {path}; run `train --stage {stage}`")
        models[stage] = load_module(path, _new_model(stage, cfg, corpus), stage).eval()
        hashes[stage] = file_sha256(path)
    return Cascade(cfg, corpus, models["lowres"], models["upsampler"], models["inverter"], hashes)


# ---- training ---------------------------------------------------------------------


def _train_records(entries: Sequence[ManifestEntry], corpus: PromptCorpus) -> list[PromptRecord]:
    return [corpus.record(e.sound_class, e.template, e.quality) for e in entries]


def train_stage(stage: str, cfg: RunConfig, corpus: PromptCorpus | None = None) -> list[float]:
    if stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}; expected one of {STAGES}")
    cfg.validate()
    corpus = corpus or default_corpus()
    data = load_split(cfg.paths.dataset, "train")
    if data.full.shape[1:] != cfg.lowres.target_shape:
        raise ConfigError(
            f"dataset mels {data.full.shape[1:]} do not match lowres.target_shape {cfg.lowres.target_shape}"
        )
    model = _new_model(stage, cfg, corpus)
    ckpt = cfg.checkpoint(stage)
    sched = cfg.diffusion.schedule_obj()
    if stage == "lowres":
        low = torch.as_tensor(to_model_space(data.lowres, cfg.dsp), dtype=torch.float32)[:, None]
        losses = lowres.train_stage(model, low, _train_records(data.entries, corpus), corpus, sched, cfg.train_lowres, ckpt)
    elif stage == "upsampler":
        full = torch.as_tensor(to_model_space(data.full, cfg.dsp), dtype=torch.float32)[:, None]
        low = torch.as_tensor(to_model_space(data.lowres, cfg.dsp), dtype=torch.float32)[:, None]
        losses = upsampler.train_stage(model, full, low, sched, cfg.train_upsampler, ckpt)
    else:
        root = Path(cfg.paths.dataset)
        waves = np.stack([read_wav(root / e.path).samples for e in data.entries])
        losses = inv.train_inverter(model, torch.as_tensor(waves, dtype=torch.float32), cfg.train_inverter, ckpt)
    write_loss_log(cfg.checkpoint_dir / f"{stage}_loss.csv", losses)
    return losses


def train_all(cfg: RunConfig, stages: Sequence[str] = STAGES, force: bool = False) -> dict[str, Path]:
    """Train stages in order; stages whose checkpoint already exists are skipped."""
    cfg.validate()
    out = {}
    for stage in stages:
        path = cfg.checkpoint(stage)
        if path.exists() and not force:
            log.info("%s: checkpoint %s present, skipping", stage, path)
        else:
            log.info("%s: training", stage)
            train_stage(stage, cfg)
        out[stage] = path
    return out


# ---- generation -------------------------------------------------------------------


def _stage_sampler(cfg: RunConfig, seed: int, stage: int, steps: int, guidance: float = 1.0) -> SamplerConfig:
    # independent noise per stage so the two diffusion stages never share draws
    return SamplerConfig(guidance_scale=guidance, seed=krng.derive_seed(seed, stage), steps_used=steps)


def synthesize(cascade: Cascade, records: Sequence[PromptRecord], seed: int) -> tuple[list[Waveform], list[MelSpectrogram]]:
    """Run prompt records through all three stages; row ``i`` uses noise keyed by (seed, i)."""
    cfg = cascade.cfg
    sched = cfg.diffusion.schedule_obj()
    d = cfg.diffusion
    low = lowres.generate(
        cascade.lowres, records, cascade.corpus, sched, _stage_sampler(cfg, seed, 1, d.lowres_steps, d.guidance_scale)
    )
    full = upsampler.upsample(cascade.upsampler, low, sched, _stage_sampler(cfg, seed, 2, d.upsampler_steps))
    values = from_model_space(full[:, 0].double().numpy(), cfg.dsp)
    mels = [MelSpectrogram(v, cfg.dsp) for v in values]
    waves = inv.invert_batch(cascade.inverter, values)
    return [Waveform(w, cfg.dsp.sample_rate) for w in waves], mels


def request_records(req: GenerationRequest, corpus: PromptCorpus) -> list[PromptRecord]:
    if req.prompt is not None:
        return [corpus.free_prompt(req.prompt, req.quality)] * req.num_samples
    return [
        corpus.sample_prompt(req.sound_class, krng.numpy_generator(req.seed, krng.STREAM_PROMPT, i), req.quality)
        for i in range(req.num_samples)
    ]


def generate(
    req: GenerationRequest,
    cfg: RunConfig,
    out_dir: str | Path | None = None,
    cascade: Cascade | None = None,
) -> GenerationResult:
    cascade = cascade or load_cascade(cfg)
    records = request_records(req, cascade.corpus)
    waves, mels = synthesize(cascade, records, req.seed)
    provenance = []
    for i, rec in enumerate(records):
        provenance.append(
            {
                "prompt": rec.text,
                "raw_prompt": rec.raw_text,
                "sound_class": req.sound_class,
                "free_prompt": req.prompt,
                "quality": req.quality.value,
                "seed": req.seed,
                "index": i,
                "num_samples": req.num_samples,
                "checkpoints": dict(cascade.hashes),
                "config": to_ini(cfg),
            }
        )
    result = GenerationResult(waves, records, provenance, mels=mels)
    if out_dir is not None:
        out = Path(out_dir)
        entries = []
        for i, (w, rec, prov) in enumerate(zip(waves, records, provenance)):
            stem = f"{req.sound_class or 'prompt'}_{req.quality.value}_s{req.seed}_{i:04d}"
            path = write_wav(out / f"{stem}.wav", w)
            (out / f"{stem}.json").write_text(json.dumps(prov, indent=2, sort_keys=True))
            result.paths.append(path)
            entries.append(
                ManifestEntry(
                    path=path.name,
                    sound_class=req.sound_class or "",
                    quality=req.quality.value,
                    tags=["generated"],
                    duration=w.duration,
                    clip_id=i,
                    split="generated",
                    prompt=rec.text,
                    template=rec.raw_text,
                    seed=req.seed,
                )
            )
        manifest = out / "manifest.jsonl"
        previous = manifest.read_text() if manifest.exists() else ""
        kept = [ln for ln in previous.splitlines() if ln and json.loads(ln)["path"] not in {e.path for e in entries}]
        manifest.write_text("".join(ln + "\n" for ln in kept) + "".join(e.to_json() + "\n" for e in entries))
    return result


# ---- quality-prefix steering ------------------------------------------------------


@dataclass
class SteeringReport:
    classes: tuple[str, ...]
    n_per_condition: int
    clean_floor: np.ndarray
    noisy_floor: np.ndarray
    p_value: float
    effect_size: float  # rank-biserial correlation of noisy vs clean
    null_p_values: list[float]
    dumps: dict[str, Path] = field(default_factory=dict)

    @property
    def significant(self) -> bool:
        return self.p_value < 0.05

    @property
    def null_nonsignificant(self) -> int:
        return sum(p > 0.05 for p in self.null_p_values)

    def to_text(self) -> str:
        lines = [
            f"classes: {', '.join(self.classes)}; n = {self.n_per_condition} per condition",
            "noise floor (median over frames of per-frame minimum log-mel energy)",
            f"  clean prefix: mean {self.clean_floor.mean():.4f}",
            f"  noisy prefix: mean {self.noisy_floor.mean():.4f}",
            f"  one-sided Mann-Whitney U (noisy > clean): p = {self.p_value:.3g}",
            f"  effect size (rank-biserial): {self.effect_size:.3f}",
            f"null calibration (clean vs clean): {self.null_nonsignificant}/{len(self.null_p_values)} reruns with p > 0.05",
        ]
        lines += [f"spectrogram dump ({k}): {v}" for k, v in self.dumps.items()]
        return "\n".join(lines) + "\n"


def one_sided_greater(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """(p, rank-biserial effect) for H1: x tends to exceed y."""
    res = mannwhitneyu(x, y, alternative="greater")
    return float(res.pvalue), float(2 * res.statistic / (len(x) * len(y)) - 1)


def _prefix_records(corpus: PromptCorpus, classes: Sequence[str], n: int, seed: int, quality: Quality) -> list[PromptRecord]:
    return [
        corpus.sample_prompt(classes[i % len(classes)], krng.numpy_generator(seed, krng.STREAM_PROMPT, i), quality)
        for i in range(n)
    ]


def _floors(waves: Sequence[Waveform], cfg: RunConfig) -> np.ndarray:
    return np.array([noise_floor(melspec(w, cfg.dsp)) for w in waves])


def steering_report(
    cfg: RunConfig,
    n_per_condition: int = 32,
    classes: Sequence[str] | None = None,
    seed: int = 0,
    null_reruns: int = 20,
    out_dir: str | Path | None = None,
    cascade: Cascade | None = None,
) -> SteeringReport:
    """Compare the noise floor of clean- vs noisy-prefixed generations.

    Both conditions share prompts and diffusion noise row by row, so the
    prefix is the only difference. The null arm draws a second clean batch
    with fresh noise and tests random equal splits of the pooled clean clips.
    """
    if n_per_condition < 2:
        raise ConfigError("n_per_condition must be >= 2")
    try:
        cascade = cascade or load_cascade(cfg)
    except StateError as exc:
        raise StateError(f"steering report needs a trained cascade: {exc}") from exc
    classes = tuple(classes or cfg.dataset.classes)
    clean_recs = _prefix_records(cascade.corpus, classes, n_per_condition, seed, Quality.CLEAN)
    noisy_recs = _prefix_records(cascade.corpus, classes, n_per_condition, seed, Quality.NOISY)
    clean_w, clean_m = synthesize(cascade, clean_recs, seed)
    noisy_w, noisy_m = synthesize(cascade, noisy_recs, seed)
    extra_w, _ = synthesize(cascade, clean_recs, krng.derive_seed(seed, 99))
    clean_f, noisy_f, extra_f = _floors(clean_w, cfg), _floors(noisy_w, cfg), _floors(extra_w, cfg)
    p, effect = one_sided_greater(noisy_f, clean_f)
    pool = np.concatenate([clean_f, extra_f])
    null_p = []
    for r in range(null_reruns):
        perm = krng.numpy_generator(seed, 1000 + r).permutation(len(pool))
        a, b = pool[perm[:n_per_condition]], pool[perm[n_per_condition:]]
        null_p.append(one_sided_greater(a, b)[0])
    report = SteeringReport(classes, n_per_condition, clean_f, noisy_f, p, effect, null_p)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report.dumps["clean"] = write_pgm(out / "pair0_clean.pgm", melspec(clean_w[0], cfg.dsp))
        report.dumps["noisy"] = write_pgm(out / "pair0_noisy.pgm", melspec(noisy_w[0], cfg.dsp))
        write_wav(out / "pair0_clean.wav", clean_w[0])
        write_wav(out / "pair0_noisy.wav", noisy_w[0])
        (out / "steering_report.txt").write_text(report.to_text())
    return report
