import math

import numpy as np
import pytest
import torch

from foleycascade.diffusion import (
    NoiseSchedule,
    SamplerConfig,
    cfg_combine,
    make_schedule,
    q_sample,
    respace,
    sample_loop,
    training_loss,
)
from foleycascade.errors import ConfigError, DimensionError, NumericalError
from foleycascade.tensor.optim import Adam
from foleycascade.unet import UNet, seeded


@pytest.mark.parametrize("kind,T", [("cosine", 1000), ("cosine", 200), ("linear", 1000), ("linear", 10)])
def test_schedule_invariants(kind, T):
    s = make_schedule(kind, T)
    assert s.T == T
    assert np.all((s.beta > 0) & (s.beta < 1))
    assert np.all(np.diff(s.alpha_bar) < 0)
    assert np.array_equal(s.alpha + s.beta, np.ones(T))


def test_cosine_schedule_values():
    s = make_schedule("cosine", 1000)
    assert s.alpha_bar[0] > 0.99
    assert s.fully_corrupting
    # direct evaluation of the cosine formula at an interior step
    f = lambda t: math.cos((t / 1000 + 0.008) / 1.008 * math.pi / 2) ** 2
    assert s.alpha_bar_at(500) == pytest.approx(f(500) / f(0), rel=1e-9)


def test_linear_schedule_product():
    s = make_schedule("linear", 10, 1e-4, 0.02)
    betas = [1e-4 + i * (0.02 - 1e-4) / 9 for i in range(10)]
    expected = 1.0
    for b in betas:
        expected *= 1 - b
    assert s.alpha_bar_at(10) == pytest.approx(expected, rel=1e-12)


def test_schedule_errors():
    with pytest.raises(ConfigError):
        make_schedule("cosine", 1)
    with pytest.raises(ConfigError):
        make_schedule("sigmoid", 10)
    with pytest.raises(ConfigError):
        NoiseSchedule(np.array([0.1, 1.0]))


def test_respace_preserves_alpha_bar():
    s = make_schedule("cosine", 200)
    r = respace(s, 50)
    assert r.T == 50
    for i, t in enumerate(r.timesteps, start=1):
        assert r.alpha_bar_at(i) == pytest.approx(s.alpha_bar_at(int(t)), rel=1e-12)


def test_q_sample_limits_and_errors():
    s = make_schedule("cosine", 200)
    g = torch.Generator().manual_seed(0)
    x0 = torch.rand(4, 1, 8, 8, generator=g, dtype=torch.float64) * 2 - 1
    eps = torch.randn(x0.shape, generator=g, dtype=torch.float64)
    assert torch.equal(q_sample(x0, 0, eps, s), x0)
    xt = q_sample(x0, s.T, eps, s)
    assert (xt - eps).abs().max() < math.sqrt(s.alpha_bar_at(s.T)) * x0.abs().max() + 1e-3
    with pytest.raises(IndexError):
        q_sample(x0, s.T + 1, eps, s)
    with pytest.raises(IndexError):
        q_sample(x0, -1, eps, s)
    with pytest.raises(DimensionError):
        q_sample(x0, 3, eps[:2], s)


def test_q_sample_linear_coefficients():
    s = make_schedule("cosine", 200)
    g = torch.Generator().manual_seed(1)
    x0 = torch.randn(3, 5, generator=g, dtype=torch.float64)
    eps = torch.randn(3, 5, generator=g, dtype=torch.float64)
    t = torch.tensor([1, 77, 200])
    out = q_sample(x0, t, eps, s)
    for i, ti in enumerate(t.tolist()):
        a = s.alpha_bar_at(ti)
        assert torch.allclose(out[i], math.sqrt(a) * x0[i] + math.sqrt(1 - a) * eps[i], atol=1e-6)


@pytest.mark.parametrize("t", [10, 100, 180])
def test_q_sample_monte_carlo_variance(t):
    s = make_schedule("cosine", 200)
    g = torch.Generator().manual_seed(t)
    x0 = torch.randn(10_000, generator=g, dtype=torch.float64) * 0.5
    eps = torch.randn(10_000, generator=g, dtype=torch.float64)
    a = s.alpha_bar_at(t)
    expected = a * x0.var().item() + (1 - a)
    assert q_sample(x0, t, eps, s).var().item() == pytest.approx(expected, rel=0.05)


def test_cfg_combine_identities():
    g = torch.Generator().manual_seed(0)
    c, u = torch.randn(2, 3, generator=g), torch.randn(2, 3, generator=g)
    assert torch.equal(cfg_combine(c, u, 1.0), c)
    assert torch.equal(cfg_combine(c, u, 0.0), u)
    assert cfg_combine(torch.tensor(1.0), torch.tensor(0.0), 2.0).item() == 2.0
    with pytest.raises(DimensionError):
        cfg_combine(c, u[:1], 3.0)


def test_training_loss_oracle_and_zero_models():
    s = make_schedule("cosine", 200)
    x0 = torch.zeros(1000, 4)

    def oracle(x_t, t, cond):
        a = torch.as_tensor(np.concatenate([[1.0], s.alpha_bar]), dtype=torch.float32)[t][:, None]
        return (x_t - a.sqrt() * x0) / (1 - a).sqrt()

    loss = training_loss(oracle, x0, None, s, torch.Generator().manual_seed(0), backward=False)
    assert loss.item() < 1e-8
    loss = training_loss(lambda x, t, c: torch.zeros_like(x), x0, None, s, torch.Generator().manual_seed(0), backward=False)
    assert loss.item() == pytest.approx(1.0, rel=0.1)


def test_training_loss_rejects_bad_models():
    s = make_schedule("cosine", 20)
    gen = torch.Generator().manual_seed(0)
    with pytest.raises(DimensionError):
        training_loss(lambda x, t, c: x[:, :1], torch.zeros(2, 3), None, s, gen)
    with pytest.raises(NumericalError):
        training_loss(lambda x, t, c: x * float("nan"), torch.zeros(2, 3), None, s, gen)


def _oracle_for(target: torch.Tensor):
    def model(x_t, t, cond):
        s = model.sched
        a = torch.tensor([s.alpha_bar_at(int(k)) for k in t], dtype=x_t.dtype).reshape(-1, *[1] * (x_t.dim() - 1))
        return (x_t - a.sqrt() * target) / (1 - a).sqrt()

    return model


def test_sample_loop_with_exact_oracle_recovers_target():
    s = make_schedule("cosine", 200)
    target = torch.linspace(-0.8, 0.8, 32).reshape(1, 1, 4, 8)
    model = _oracle_for(target)
    model.sched = s
    out = sample_loop(model, (3, 1, 4, 8), None, s, SamplerConfig(seed=5))
    assert ((out - target) ** 2).mean() < 1e-4


def test_sample_loop_determinism_and_shape():
    s = make_schedule("cosine", 20)

    def model(x, t, c):
        return 0.1 * x

    a = sample_loop(model, (2, 1, 3, 5), None, s, SamplerConfig(seed=7))
    b = sample_loop(model, (2, 1, 3, 5), None, s, SamplerConfig(seed=7))
    c = sample_loop(model, (2, 1, 3, 5), None, s, SamplerConfig(seed=8))
    assert a.shape == (2, 1, 3, 5)
    assert a.numpy().tobytes() == b.numpy().tobytes()
    assert not torch.equal(a, c)
    with pytest.raises(DimensionError):
        sample_loop(lambda x, t, c: x[:, :, :1], (1, 1, 3, 5), None, s, SamplerConfig())


def test_guided_sampling_w1_equals_unguided():
    s = make_schedule("cosine", 10)

    def model(x, t, c):
        return 0.5 * x + c

    cond = torch.full((2, 1, 2, 2), 0.2)
    unc = torch.zeros(2, 1, 2, 2)
    plain = sample_loop(model, (2, 1, 2, 2), cond, s, SamplerConfig(seed=1))
    same = sample_loop(model, (2, 1, 2, 2), cond, s, SamplerConfig(seed=1, guidance_scale=1.0), uncond=unc)
    assert torch.equal(plain, same)
    guided = sample_loop(
        model, (2, 1, 2, 2), cond, s, SamplerConfig(seed=1, guidance_scale=3.0), uncond=unc, combine_batch=lambda a, b: torch.cat([a, b])
    )
    assert not torch.equal(plain, guided)


def test_sampler_config_validation():
    with pytest.raises(ConfigError):
        SamplerConfig(guidance_scale=-1)
    with pytest.raises(ConfigError):
        SamplerConfig(steps_used=0)


def memorization_mse(steps: int = 400, seed: int = 0) -> tuple[float, float, float]:
    """Train a small U-Net on one target; return (first loss, last loss, sampled MSE)."""
    s = make_schedule("cosine", 200)
    target = torch.tensor(np.sin(np.linspace(0, 6, 8 * 32)).reshape(1, 1, 8, 32) * 0.8, dtype=torch.float32)
    with seeded(seed):
        net = UNet((8, 32), base_channels=16, num_blocks=2, groups=8, time_embed_dim=32)
    opt = Adam(list(net.parameters()), learning_rate=3e-3)
    gen = torch.Generator().manual_seed(seed)
    losses = []
    for _ in range(steps):
        opt.zero_grad()
        loss = training_loss(lambda x, t, c: net(x, t), target.expand(16, -1, -1, -1), None, s, gen)
        opt.step()
        losses.append(loss.item())
    net.eval()
    out = sample_loop(lambda x, t, c: net(x, t), (4, 1, 8, 32), None, s, SamplerConfig(seed=seed))
    return float(np.mean(losses[:20])), float(np.mean(losses[-20:])), float(((out - target) ** 2).mean())


def test_memorization_single_target():
    first, last, mse = memorization_mse()
    assert last < first
    assert mse < 0.1
