"""Run configuration: presets, INI round-trip and cross-module validation."""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import torch

from .diffusion import NoiseSchedule, make_schedule
from .dsp import DspConfig, desk_dsp, paper_dsp
from .errors import ConfigError
from .foundry import clip_samples
from .inverter import InverterConfig
from .lowres import PAPER_ARCH, ArchitectureConfig
from .prompts import SOUND_CLASSES
from .training import TrainConfig
from .upsampler import PAPER_UPSAMPLER, UpsamplerConfig

PRESETS = ("desk", "paper")


@dataclass
class DiffusionSettings:
    schedule: str = "cosine"
    timesteps: int = 200
    guidance_scale: float = 3.0
    lowres_steps: int = 200
    upsampler_steps: int = 50

    def schedule_obj(self) -> NoiseSchedule:
        return make_schedule(self.schedule, self.timesteps)


@dataclass
class Paths:
    dataset: str = "work/dataset"
    checkpoints: str = "work/checkpoints"
    output: str = "work/output"


@dataclass
class DatasetSettings:
    classes: tuple[str, ...] = SOUND_CLASSES
    clips_per_class: int = 64
    seed: int = 0


@dataclass
class RunConfig:
    preset: str = "desk"
    seed: int = 0
    dsp: DspConfig = field(default_factory=desk_dsp)
    lowres: ArchitectureConfig = field(default_factory=ArchitectureConfig)
    upsampler: UpsamplerConfig = field(default_factory=UpsamplerConfig)
    inverter: InverterConfig = field(default_factory=InverterConfig)
    diffusion: DiffusionSettings = field(default_factory=DiffusionSettings)
    train_lowres: TrainConfig = field(default_factory=lambda: TrainConfig(steps=3000, batch_size=32, learning_rate=2e-3))
    train_upsampler: TrainConfig = field(default_factory=lambda: TrainConfig(steps=3000, batch_size=8, learning_rate=2e-3))
    train_inverter: TrainConfig = field(default_factory=lambda: TrainConfig(steps=3000, batch_size=8, learning_rate=1e-3))
    dataset: DatasetSettings = field(default_factory=DatasetSettings)
    paths: Paths = field(default_factory=Paths)

    def __post_init__(self) -> None:
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; expected one of {PRESETS}")

    def validate(self) -> "RunConfig":
        validate(self)
        return self

    @property
    def checkpoint_dir(self) -> Path:
        return Path(self.paths.checkpoints)

    def checkpoint(self, stage: str) -> Path:
        return self.checkpoint_dir / f"{stage}.casc"


def desk_config() -> RunConfig:
    return RunConfig()


PAPER_INVERTER = InverterConfig(upsample_factors=(8, 4, 4), channels=(512, 256, 128, 64), film_hidden=256)


def paper_config() -> RunConfig:
    return RunConfig(
        preset="paper",
        dsp=paper_dsp(),
        lowres=PAPER_ARCH,
        upsampler=PAPER_UPSAMPLER,
        inverter=PAPER_INVERTER,
        diffusion=DiffusionSettings(timesteps=1000, lowres_steps=1000, upsampler_steps=1000),
    )


def preset(name: str) -> RunConfig:
    if name == "desk":
        return desk_config()
    if name == "paper":
        return paper_config()
    raise ConfigError(f"unknown preset {name!r}; expected one of {PRESETS}")


def validate(cfg: RunConfig) -> None:
    """Reject cross-module shape inconsistencies before any compute runs."""
    dsp = cfg.dsp
    frames = dsp.frames_for(clip_samples(dsp.sample_rate))
    if cfg.lowres.target_shape != (dsp.mel_bins, frames):
        raise ConfigError(
            f"lowres.target_shape {cfg.lowres.target_shape} disagrees with dsp "
            f"({dsp.mel_bins} mel bins x {frames} frames per clip)"
        )
    if cfg.upsampler.target_shape != cfg.lowres.target_shape:
        raise ConfigError(
            f"upsampler.target_shape {cfg.upsampler.target_shape} != lowres.target_shape {cfg.lowres.target_shape}"
        )
    if cfg.upsampler.lowres_shape != cfg.lowres.lowres_shape:
        raise ConfigError(
            f"upsampler.lowres_shape {cfg.upsampler.lowres_shape} != lowres.lowres_shape {cfg.lowres.lowres_shape}"
        )
    if cfg.upsampler.factor != cfg.lowres.factor:
        raise ConfigError("lowres and upsampler disagree on the resolution factor")
    if cfg.inverter.hop != dsp.hop_length:
        raise ConfigError(
            f"inverter upsample factors {cfg.inverter.upsample_factors} multiply to {cfg.inverter.hop}, "
            f"dsp.hop_length is {dsp.hop_length}"
        )
    d = cfg.diffusion
    if d.timesteps < 2 or not (1 <= d.lowres_steps <= d.timesteps) or not (1 <= d.upsampler_steps <= d.timesteps):
        raise ConfigError("diffusion step counts must satisfy 1 <= steps <= timesteps, timesteps >= 2")
    if not d.schedule_obj().fully_corrupting:
        raise ConfigError(f"{d.schedule} schedule with T={d.timesteps} does not corrupt to near-pure noise")
    for c in cfg.dataset.classes:
        if c not in SOUND_CLASSES:
            raise ConfigError(f"dataset.classes: unknown sound class {c!r}")
    if cfg.dataset.clips_per_class < 1:
        raise ConfigError("dataset.clips_per_class must be >= 1")


# ---- INI round trip -------------------------------------------------------------

_SECTIONS = (
    ("run", None),
    ("dsp", "dsp"),
    ("lowres", "lowres"),
    ("upsampler", "upsampler"),
    ("inverter", "inverter"),
    ("diffusion", "diffusion"),
    ("train.lowres", "train_lowres"),
    ("train.upsampler", "train_upsampler"),
    ("train.inverter", "train_inverter"),
    ("dataset", "dataset"),
    ("paths", "paths"),
)


def _fmt(v: Any) -> str:
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    return str(v)


def _parse(raw: str, like: Any, key: str) -> Any:
    try:
        if isinstance(like, bool):
            return {"true": True, "false": False}[raw.strip().lower()]
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
        if isinstance(like, tuple):
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            if like and isinstance(like[0], int):
                return tuple(int(p) for p in parts)
            return tuple(parts)
        return raw.strip()
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from exc


def to_ini(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser()
    parser["run"] = {"preset": cfg.preset, "seed": str(cfg.seed)}
    for section, attr in _SECTIONS[1:]:
        obj = getattr(cfg, attr)
        parser[section] = {f.name: _fmt(getattr(obj, f.name)) for f in fields(obj)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def from_ini(text: str) -> RunConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file: {exc}") from exc
    unknown = set(parser.sections()) - {s for s, _ in _SECTIONS}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    base = preset(parser.get("run", "preset", fallback="desk"))
    if parser.has_option("run", "seed"):
        base.seed = _parse(parser.get("run", "seed"), 0, "run.seed")
    for section, attr in _SECTIONS[1:]:
        if not parser.has_section(section):
            continue
        obj = getattr(base, attr)
        known = {f.name: f for f in fields(obj)}
        updates = {}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(f"unknown key {section}.{key}")
            updates[key] = _parse(raw, getattr(obj, key), f"{section}.{key}")
        try:
            setattr(base, attr, replace(obj, **updates))
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}]: {exc}") from exc
    return base


def load_config(path: str | Path | None, preset_name: str | None = None) -> RunConfig:
    if path is None:
        cfg = preset(preset_name or "desk")
    else:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        cfg = from_ini(p.read_text())
    return cfg.validate()


def save_config(cfg: RunConfig, path: str | Path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(to_ini(cfg))
    return p


# ---- shape-only dry run ---------------------------------------------------------


def dry_run_shapes(cfg: RunConfig) -> dict[str, tuple[int, ...]]:
    """Push one sample through all three stages on the meta device.

    No parameter memory is allocated, so this works for the paper preset.
    """
    from . import inverter as inv
    from . import lowres, upsampler
    from .prompts import default_corpus
    from .text_encoder import TokenBatch

    cfg.validate()
    corpus = default_corpus()
    with torch.device("meta"):
        gen = lowres.LowresGenerator(cfg.lowres, corpus.vocab_size)
        ups = upsampler.SpectrogramUpsampler(cfg.upsampler)
        voc = inv.MelInverter(cfg.inverter, cfg.dsp)
        t = torch.zeros(1, dtype=torch.long)
        record = corpus.record(SOUND_CLASSES[0], corpus.templates[SOUND_CLASSES[0]][0], "clean")
        tokens = TokenBatch.from_records([record], corpus)
        tokens = dataclasses.replace(tokens, ids=tokens.ids.to("meta"), mask=tokens.mask.to("meta"), is_null=tokens.is_null.to("meta"))
        x_low = torch.empty(1, 1, *cfg.lowres.lowres_shape)
        low = gen(x_low, t, gen.encode(tokens))
        full = ups(torch.empty(1, 1, *cfg.upsampler.target_shape), t, low)
        wave = voc(full[:, 0])
    return {
        "lowres": tuple(low.shape[2:]),
        "full": tuple(full.shape[2:]),
        "waveform": (wave.shape[-1],),
    }
