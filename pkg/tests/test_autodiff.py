import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from dmt.autodiff import (ADAM_EPS, DTYPE, backward, finite_diff_grad, make_optimizer,
                          noam_rate)


def leaf(values):
    return torch.tensor(values, dtype=DTYPE, requires_grad=True)


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8))


def test_backward_square_sum():
    x = leaf([1.0, 2.0, 3.0])
    backward((x * x).sum())
    assert x.grad.tolist() == [2.0, 4.0, 6.0]


def test_backward_linear_map_selects_active_row():
    x = torch.tensor([1.0, 0.0], dtype=DTYPE)
    W = leaf([[1.0, 0.0], [0.0, 1.0]])
    backward((x @ W).sum())
    assert W.grad.tolist() == [[1.0, 1.0], [0.0, 0.0]]


def test_backward_rejects_non_scalar():
    x = leaf([1.0, 2.0])
    with pytest.raises(ValueError):
        backward(x * 2)


def test_gradients_accumulate_across_calls():
    x = leaf([1.0, -2.0])
    backward((x * x).sum())
    backward((3 * x).sum())
    assert x.grad.tolist() == [2.0 + 3.0, -4.0 + 3.0]


def test_finite_diff_square():
    x = leaf([3.0])
    (g,) = finite_diff_grad(lambda: (x ** 2).sum().item(), [x])
    assert g[0] == pytest.approx(6.0, abs=1e-6)


def test_finite_diff_entropy_derivative():
    p = leaf([0.3])

    def H():
        q = p[0].item()
        return -(q * math.log(q) + (1 - q) * math.log(1 - q))

    (g,) = finite_diff_grad(H, [p])
    assert g[0] == pytest.approx(-(math.log(0.3) - math.log(0.7)), abs=1e-6)
    assert g[0] == pytest.approx(0.8473, abs=1e-4)


def test_finite_diff_reports_non_finite():
    x = leaf([0.0])
    with pytest.raises(FloatingPointError):
        finite_diff_grad(lambda: float("nan"), [x])


def test_finite_diff_restores_values():
    x = leaf([1.5, -0.5])
    finite_diff_grad(lambda: (x ** 3).sum().item(), [x])
    assert x.tolist() == [1.5, -0.5]


def _mlp(seed):
    g = torch.Generator().manual_seed(seed)
    sizes = [4, 5, 5, 3]
    params = []
    for a, b in zip(sizes, sizes[1:]):
        params.append(torch.randn(a, b, dtype=DTYPE, generator=g).requires_grad_())
        params.append((0.1 * torch.randn(b, dtype=DTYPE, generator=g)).requires_grad_())
    x = torch.randn(6, 4, dtype=DTYPE, generator=g)

    def f():
        h = x
        for i in range(0, len(params), 2):
            h = h @ params[i] + params[i + 1]
            if i < len(params) - 2:
                h = torch.tanh(h)
        return torch.log_softmax(h, -1)[:, 0].sum()

    return params, f


@pytest.mark.parametrize("seed", range(20))
def test_three_layer_net_gradients_match_finite_differences(seed):
    params, f = _mlp(seed)
    backward(f())
    numeric = finite_diff_grad(lambda: f().item(), params)
    for p, g in zip(params, numeric):
        assert rel_err(p.grad.numpy(), g) < 1e-4


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=8), st.floats(-100, 100))
def test_softmax_rows_normalized_and_shift_invariant(row, shift):
    x = torch.tensor(row, dtype=DTYPE)
    s = torch.softmax(x, -1)
    assert abs(s.sum().item() - 1) < 1e-12
    assert torch.allclose(s, torch.softmax(x + shift, -1), atol=1e-12)


def test_adam_zero_gradient_is_fixed_point():
    w = leaf([1.0, -2.0])
    opt, _ = make_optimizer([w], lr=0.1)
    w.grad = torch.zeros_like(w)
    opt.step()
    assert w.tolist() == [1.0, -2.0]
    st_ = opt.state[w]
    assert st_["exp_avg"].abs().max() == 0 and st_["exp_avg_sq"].abs().max() == 0


def test_adam_first_step_direction():
    # m_hat = v_hat = 1 after bias correction, so the step is lr * 1 / (1 + eps)
    lr = 0.01
    w = leaf([0.5])
    opt, _ = make_optimizer([w], lr=lr)
    w.grad = torch.ones_like(w)
    opt.step()
    assert w.item() == pytest.approx(0.5 - lr / (1 + ADAM_EPS), abs=1e-15)


def test_adam_step_counter_increments():
    w = leaf([0.5])
    opt, _ = make_optimizer([w], lr=0.01)
    for k in range(1, 4):
        w.grad = torch.ones_like(w)
        opt.step()
        assert int(opt.state[w]["step"]) == k


def test_noam_schedule_values():
    d = 32
    peak = noam_rate(400, d, 400)
    assert peak == pytest.approx(d ** -0.5 * 400 ** -0.5)
    assert noam_rate(100, d, 400) == pytest.approx(peak * 100 / 400)
    assert noam_rate(1600, d, 400) == pytest.approx(d ** -0.5 * 1600 ** -0.5)
    with pytest.raises(ValueError):
        noam_rate(0, d, 400)


def test_scheduler_drives_optimizer_rate():
    w = leaf([0.0])
    opt, sched = make_optimizer([w], lr=2.0, d_model=16, warmup=10)
    rates = []
    for _ in range(12):
        rates.append(opt.param_groups[0]["lr"])
        w.grad = torch.ones_like(w)
        opt.step()
        sched.step()
    assert rates == pytest.approx([2.0 * noam_rate(s, 16, 10) for s in range(1, 13)])


def test_ops_are_deterministic():
    a, fa = _mlp(5)
    b, fb = _mlp(5)
    assert fa().item() == fb().item()
