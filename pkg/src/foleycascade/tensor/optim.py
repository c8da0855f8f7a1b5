"""Adam with bias correction, one state record per parameter tensor."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import torch
from torch import Tensor

from ..errors import DimensionError, NumericalError


@dataclass
class AdamState:
    first_moment: Tensor
    second_moment: Tensor
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, param: Tensor, **hyper) -> "AdamState":
        return cls(torch.zeros_like(param), torch.zeros_like(param), **hyper)


@torch.no_grad()
def adam_step(params: Tensor, grads: Tensor, state: AdamState) -> Tensor:
    """Apply one bias-corrected Adam update to ``params`` in place and return it.

    Rejects the update (leaving params and state untouched) when ``grads``
    holds NaN or Inf.
    """
    if grads.shape != params.shape or state.first_moment.shape != params.shape:
        raise DimensionError(
            f"adam_step: params {tuple(params.shape)}, grads {tuple(grads.shape)}, "
            f"moments {tuple(state.first_moment.shape)} disagree"
        )
    if state.step_count < 0:
        raise ValueError("step_count must be >= 0")
    if not torch.isfinite(grads).all():
        raise NumericalError("adam_step: non-finite gradient, update rejected")
    state.step_count += 1
    b1, b2 = state.beta1, state.beta2
    state.first_moment.mul_(b1).add_(grads, alpha=1 - b1)
    state.second_moment.mul_(b2).addcmul_(grads, grads, value=1 - b2)
    m_hat = state.first_moment / (1 - b1**state.step_count)
    v_hat = state.second_moment / (1 - b2**state.step_count)
    params.sub_(state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon))
    return params


@dataclass
class Adam:
    """Thin optimizer over a parameter list; the maths lives in :func:`adam_step`."""

    params: list[Tensor]
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    grad_clip: float | None = 1.0
    states: list[AdamState] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.params = list(self.params)
        hyper = dict(learning_rate=self.learning_rate, beta1=self.beta1, beta2=self.beta2, epsilon=self.epsilon)
        self.states = [AdamState.zeros_like(p.detach(), **hyper) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else torch.zeros_like(p) for p in self.params]
        for g in grads:
            if not torch.isfinite(g).all():
                raise NumericalError("non-finite gradient, update rejected")
        if self.grad_clip is not None:
            norm = torch.sqrt(sum((g.double() ** 2).sum() for g in grads))
            if norm > self.grad_clip:
                grads = [g * (self.grad_clip / norm).to(g.dtype) for g in grads]
        for p, g, s in zip(self.params, grads, self.states):
            s.learning_rate = self.learning_rate
            adam_step(p.data, g, s)


def parameters(modules: Iterable[torch.nn.Module]) -> list[Tensor]:
    out: list[Tensor] = []
    for m in modules:
        out.extend(m.parameters())
    return out
