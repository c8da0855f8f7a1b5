import pytest
import torch

from foleycascade.errors import ConfigError, DimensionError, NumericalError, StateError
from foleycascade.tensor import ops
from foleycascade.tensor.checkpoint import MAGIC, load_checkpoint, load_module, save_checkpoint, save_module
from foleycascade.tensor.layers import Conv2d, Linear
from foleycascade.tensor.optim import Adam, AdamState, adam_step
from gradient_suite import CASES, SEEDS, TOLERANCE


@pytest.mark.parametrize("name", [n for n in CASES if not n.startswith("unet")])
@pytest.mark.parametrize("seed", SEEDS)
def test_op_gradients_match_finite_differences(name, seed):
    assert CASES[name](seed) < TOLERANCE


def test_conv2d_identity_kernel():
    x = torch.arange(9.0).reshape(1, 1, 3, 3)
    out = ops.conv2d(x, torch.ones(1, 1, 1, 1))
    assert torch.equal(out, x)


def test_conv2d_center_sum():
    out = ops.conv2d(torch.ones(1, 1, 3, 3), torch.ones(1, 1, 3, 3), padding=1)
    assert out[0, 0, 1, 1].item() == 9.0


@pytest.mark.parametrize("h,k,s,p", [(8, 3, 1, 0), (8, 3, 2, 1), (7, 2, 3, 2)])
def test_conv2d_output_size(h, k, s, p):
    out = ops.conv2d(torch.zeros(1, 2, h, h), torch.zeros(3, 2, k, k), stride=s, padding=p)
    assert out.shape == (1, 3, (h + 2 * p - k) // s + 1, (h + 2 * p - k) // s + 1)


def test_conv2d_shape_errors_report_both_shapes():
    with pytest.raises(DimensionError, match=r"\(1, 2, 4, 4\).*\(3, 5, 3, 3\)"):
        ops.conv2d(torch.zeros(1, 2, 4, 4), torch.zeros(3, 5, 3, 3))
    with pytest.raises(DimensionError):
        ops.conv2d(torch.zeros(1, 1, 2, 2), torch.zeros(1, 1, 3, 3))
    with pytest.raises(ConfigError):
        ops.conv2d(torch.zeros(1, 1, 4, 4), torch.zeros(1, 1, 3, 3), stride=0)


@pytest.mark.parametrize("dtype,tol", [(torch.float32, 1e-4), (torch.float64, 1e-10)])
def test_group_norm_constant_input_gives_zero(dtype, tol):
    # zero variance: eps floors the denominator, so only mean rounding survives
    out = ops.group_norm(torch.full((2, 4, 3, 3), 7.0, dtype=dtype), 2, torch.ones(4, dtype=dtype), torch.zeros(4, dtype=dtype))
    assert out.abs().max() < tol


def test_group_norm_statistics():
    x = torch.randn(3, 8, 5, 5, generator=torch.Generator().manual_seed(0), dtype=torch.float64) * 4 + 2
    out = ops.group_norm(x, 4).reshape(3, 4, -1)
    assert out.mean(-1).abs().max() < 1e-6
    assert (out.var(-1, unbiased=False) - 1).abs().max() < 1e-4


def test_group_norm_rejects_indivisible_channels():
    with pytest.raises(ConfigError):
        ops.group_norm(torch.zeros(1, 6, 2, 2), 4)


def test_silu_values():
    assert ops.silu(torch.tensor(0.0)).item() == 0.0
    assert abs(ops.silu(torch.tensor(20.0, dtype=torch.float64)).item() - 20.0) < 1e-6


def test_attention_single_key_returns_value():
    q = torch.randn(2, 5, 4)
    k = torch.randn(2, 1, 4)
    v = torch.randn(2, 1, 4)
    out = ops.attention(q, k, v)
    assert torch.allclose(out, v.expand(2, 5, 4))


def test_attention_weights_normalized_and_masked():
    g = torch.Generator().manual_seed(1)
    q, k, v = (torch.randn(2, 3, 4, generator=g) for _ in range(3))
    mask = torch.tensor([[True, True, False], [True, False, False]])
    _, w = ops.attention(q, k, v, key_mask=mask, return_weights=True)
    assert torch.allclose(w.sum(-1), torch.ones(2, 3), atol=1e-6)
    assert torch.all(w[0, :, 2] == 0) and torch.all(w[1, :, 1:] == 0)


def test_attention_dimension_mismatch():
    with pytest.raises(DimensionError):
        ops.attention(torch.zeros(1, 2, 3), torch.zeros(1, 2, 4), torch.zeros(1, 2, 4))


def test_non_finite_values_are_surfaced():
    with pytest.raises(NumericalError):
        ops.linear(torch.tensor([[float("nan"), 1.0]]), torch.ones(1, 2))


def test_tape_linearity():
    g = torch.Generator().manual_seed(3)
    x = torch.randn(1, 2, 5, 5, generator=g, dtype=torch.float64, requires_grad=True)
    k = torch.randn(3, 2, 3, 3, generator=g, dtype=torch.float64)

    def f1(x):
        return ops.silu(ops.conv2d(x, k, padding=1)).sum()

    def f2(x):
        return ops.group_norm(x, 2).pow(2).sum()

    (ga,) = torch.autograd.grad(f1(x) + f2(x), x)
    (g1,) = torch.autograd.grad(f1(x), x)
    (g2,) = torch.autograd.grad(f2(x), x)
    assert torch.allclose(ga, g1 + g2, rtol=1e-12, atol=1e-12)


def test_forward_is_bit_deterministic():
    torch.manual_seed(0)
    layer = Conv2d(3, 4)
    x = torch.randn(2, 3, 8, 8)
    assert torch.equal(layer(x), layer(x))


# ---- Adam -------------------------------------------------------------------------


def _state(p, lr=0.1):
    return AdamState.zeros_like(p, learning_rate=lr)


def test_adam_zero_gradient_from_rest_leaves_params():
    p = torch.tensor([1.0, -2.0])
    st = _state(p)
    adam_step(p, torch.zeros(2), st)
    assert torch.equal(p, torch.tensor([1.0, -2.0]))
    assert st.step_count == 1


def test_adam_zero_gradient_decays_moments():
    p = torch.tensor([1.0])
    st = _state(p)
    st.first_moment += 0.5
    st.second_moment += 0.25
    adam_step(p, torch.zeros(1), st)
    assert st.first_moment.item() == pytest.approx(0.45)
    assert st.second_moment.item() == pytest.approx(0.25 * 0.999)


def test_adam_first_step_is_lr_times_sign():
    p = torch.full((3,), 0.5, dtype=torch.float64)
    g = torch.tensor([3.0, -0.01, 200.0], dtype=torch.float64)
    st = _state(p, lr=0.01)
    adam_step(p, g, st)
    # closed form: m_hat = g, v_hat = g^2, so delta = -lr * g / (|g| + eps)
    expected = -0.01 * g / (g.abs() + st.epsilon)
    assert torch.allclose(p - 0.5, expected, rtol=1e-9, atol=1e-15)


def test_adam_minimizes_quadratic():
    x = torch.tensor([1.0], dtype=torch.float64)
    st = _state(x, lr=0.1)
    for _ in range(200):
        adam_step(x, 2 * x, st)
    assert abs(x.item()) < 0.05
    assert st.step_count == 200


def test_adam_rejects_non_finite_gradient_without_mutation():
    p = torch.tensor([1.0, 2.0])
    st = _state(p)
    with pytest.raises(NumericalError):
        adam_step(p, torch.tensor([1.0, float("inf")]), st)
    assert torch.equal(p, torch.tensor([1.0, 2.0])) and st.step_count == 0
    assert torch.all(st.first_moment == 0)


def test_adam_shape_mismatch():
    p = torch.zeros(3)
    with pytest.raises(DimensionError):
        adam_step(p, torch.zeros(2), _state(p))


def test_adam_optimizer_wrapper_trains_linear():
    torch.manual_seed(0)
    lin = Linear(3, 1)
    opt = Adam(list(lin.parameters()), learning_rate=0.05)
    x = torch.randn(64, 3)
    y = x @ torch.tensor([[1.0], [-2.0], [0.5]]) + 0.3
    first = None
    for _ in range(300):
        opt.zero_grad()
        loss = ((lin(x) - y) ** 2).mean()
        first = first or loss.item()
        loss.backward()
        opt.step()
    assert loss.item() < 0.01 * first


# ---- checkpoint -------------------------------------------------------------------


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    g = torch.Generator().manual_seed(0)
    tensors = {"a.weight": torch.randn(3, 4, 5, generator=g), "b": torch.tensor([1e-38, -0.0, 3.5e38]), "scalar": torch.tensor(2.5)}
    path = save_checkpoint(tmp_path / "x.casc", tensors)
    raw = path.read_bytes()
    assert raw[:4] == MAGIC
    back = load_checkpoint(path)
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].shape == tensors[k].shape
        assert back[k].numpy().tobytes() == tensors[k].numpy().tobytes()
    save_checkpoint(tmp_path / "y.casc", back)
    assert (tmp_path / "y.casc").read_bytes() == raw


def test_checkpoint_errors(tmp_path):
    with pytest.raises(StateError):
        load_checkpoint(tmp_path / "missing.casc")
    (tmp_path / "bad.casc").write_bytes(b"NOPE\x01\x00\x00\x00")
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path / "bad.casc")


def test_module_checkpoint_prefix_and_mismatch(tmp_path):
    torch.manual_seed(0)
    a = Linear(3, 2)
    path = save_module(tmp_path / "m.casc", a, "lowres")
    assert all(k.startswith("lowres.") for k in load_checkpoint(path))
    b = load_module(path, Linear(3, 2), "lowres")
    assert torch.equal(a.weight, b.weight)
    with pytest.raises(ConfigError):
        load_module(path, Linear(4, 2), "lowres")
