"""Generic training loop plumbing shared by the three stages."""

from __future__ import annotations

import copy
import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import torch
from torch import Tensor, nn

from .errors import NumericalError
from .tensor.checkpoint import save_module
from .tensor.optim import Adam

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 16
    learning_rate: float = 2e-3
    seed: int = 0
    cond_dropout: float = 0.1
    log_every: int = 50
    snapshot_every: int = 100
    warmup: int = 50
    final_lr_fraction: float = 0.1

    def lr_at(self, step: int) -> float:
        if step < self.warmup:
            return self.learning_rate * (step + 1) / self.warmup
        # linear decay to final_lr_fraction
        frac = (step - self.warmup) / max(self.steps - self.warmup, 1)
        return self.learning_rate * (1.0 - (1.0 - self.final_lr_fraction) * frac)


def run_training(
    stage: str,
    module: nn.Module,
    step_loss: Callable[[int], Tensor],
    hp: TrainConfig,
    checkpoint: Path | None = None,
) -> list[float]:
    """Drive ``hp.steps`` Adam updates; ``step_loss(step)`` builds the loss for one step.

    On a non-finite loss or gradient the last snapshot is written next to the
    checkpoint and a :class:`NumericalError` names the stage.
    """
    opt = Adam(list(module.parameters()), learning_rate=hp.learning_rate)
    losses: list[float] = []
    snapshot = copy.deepcopy(module.state_dict())
    started = time.perf_counter()
    module.train()
    for step in range(hp.steps):
        opt.learning_rate = hp.lr_at(step)
        opt.zero_grad()
        try:
            loss = step_loss(step)
            if not torch.isfinite(loss):
                raise NumericalError("non-finite loss")
            loss.backward()
            opt.step()
        except NumericalError as exc:
            where = ""
            if checkpoint is not None:
                module.load_state_dict(snapshot)
                last = save_module(checkpoint.with_suffix(".last_good.casc"), module, stage)
                where = f"; last good parameters saved to {last}"
            raise NumericalError(f"stage {stage!r} failed at step {step}: {exc}{where}") from exc
        losses.append(float(loss.detach()))
        if hp.snapshot_every and step % hp.snapshot_every == 0:
            snapshot = copy.deepcopy(module.state_dict())
        if hp.log_every and (step % hp.log_every == 0 or step == hp.steps - 1):
            log.info("%s step %d/%d loss %.4f (%.0fs)", stage, step, hp.steps, losses[-1], time.perf_counter() - started)
    module.eval()
    if checkpoint is not None:
        save_module(checkpoint, module, stage)
    return losses


def write_loss_log(path: Path, losses: list[float]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for i, v in enumerate(losses):
            w.writerow([i, repr(v)])


def read_loss_log(path: Path) -> list[float]:
    with Path(path).open() as fh:
        rows = list(csv.DictReader(fh))
    return [float(r["loss"]) for r in rows]
