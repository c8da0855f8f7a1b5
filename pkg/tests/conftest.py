"""Session fixtures: a few-step cascade for plumbing tests and a fully trained desk cascade.

Set FOLEYCASCADE_RUN_DIR to keep the fully trained run between sessions; a
directory holding a finished run (``timing.json`` present) is reused as is.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass
from pathlib import Path

import pytest

from foleycascade import pipeline
from foleycascade.config import RunConfig, desk_config
from foleycascade.foundry import DatasetConfig, build_dataset

E2E_CLASSES = ("dog_bark", "rain")
E2E_CLIPS = 64


@dataclass
class TrainedRun:
    cfg: RunConfig
    root: Path
    build_seconds: float
    train_seconds: float
    stage_seconds: dict[str, float]


def make_cfg(root: Path, classes=E2E_CLASSES, clips: int = E2E_CLIPS) -> RunConfig:
    cfg = desk_config()
    cfg.paths.dataset = str(root / "dataset")
    cfg.paths.checkpoints = str(root / "checkpoints")
    cfg.paths.output = str(root / "output")
    cfg.dataset.classes = tuple(classes)
    cfg.dataset.clips_per_class = clips
    return cfg


def build_for(cfg: RunConfig) -> float:
    start = time.perf_counter()
    dcfg = DatasetConfig({c: cfg.dataset.clips_per_class for c in cfg.dataset.classes}, seed=cfg.dataset.seed)
    build_dataset(dcfg, cfg.paths.dataset, cfg.dsp, cfg.lowres.factor)
    return time.perf_counter() - start


def train_timed(cfg: RunConfig) -> dict[str, float]:
    stage_seconds = {}
    for stage in pipeline.STAGES:
        start = time.perf_counter()
        pipeline.train_all(cfg, (stage,))
        stage_seconds[stage] = time.perf_counter() - start
    return stage_seconds


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory) -> RunConfig:
    cfg = make_cfg(tmp_path_factory.mktemp("tiny"), classes=("rain", "keyboard"), clips=4)
    for hp in (cfg.train_lowres, cfg.train_upsampler, cfg.train_inverter):
        hp.steps, hp.batch_size, hp.warmup = 3, 2, 1
    cfg.diffusion.lowres_steps = cfg.diffusion.upsampler_steps = 4
    build_for(cfg)
    pipeline.train_all(cfg)
    return cfg


@pytest.fixture(scope="session")
def trained_run(tmp_path_factory) -> TrainedRun:
    env = os.environ.get("FOLEYCASCADE_RUN_DIR")
    root = Path(env) if env else tmp_path_factory.mktemp("e2e")
    cfg = make_cfg(root)
    timing = root / "timing.json"
    if timing.exists():
        t = json.loads(timing.read_text())
        return TrainedRun(cfg, root, t["build_seconds"], t["train_seconds"], t["stage_seconds"])
    build_seconds = build_for(cfg)
    stage_seconds = train_timed(cfg)
    run = TrainedRun(cfg, root, build_seconds, sum(stage_seconds.values()), stage_seconds)
    timing.write_text(
        json.dumps({"build_seconds": build_seconds, "train_seconds": run.train_seconds, "stage_seconds": stage_seconds})
    )
    return run


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
