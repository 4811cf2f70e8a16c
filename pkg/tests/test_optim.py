"""Adam update rule against hand-computed steps."""

import numpy as np
import pytest

from spatialgnn import Adam, NumericError, Tensor


def make_param(values):
    p = Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)
    return p


def test_first_step_direction_and_magnitude():
    p = make_param([1.0, -2.0])
    p.grad = np.array([0.5, -0.5])
    opt = Adam({"p": p}, lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)
    opt.step()
    # bias-corrected first step: lr * g / (|g| + eps), i.e. lr * sign(g)
    want = np.array([1.0, -2.0]) - 0.1 * np.array([0.5, -0.5]) / (0.5 + 1e-8)
    np.testing.assert_allclose(p.data, want, atol=1e-12)


def test_constant_gradient_steps_stay_at_lr_sign():
    p = make_param([0.0])
    opt = Adam({"p": p}, lr=0.01)
    prev = 0.0
    for _ in range(10):
        p.grad = np.array([2.0])
        opt.step()
        # with a constant gradient the bias-corrected update is lr*sign(g)
        assert (prev - p.data[0]) == pytest.approx(0.01, rel=1e-6)
        prev = float(p.data[0])


def test_skips_params_without_grads():
    p, q = make_param([1.0]), make_param([5.0])
    p.grad = np.array([1.0])
    opt = Adam({"p": p, "q": q}, lr=0.5)
    opt.step()
    assert q.data[0] == 5.0
    assert p.data[0] != 1.0


def test_nan_gradient_raises_with_param_name():
    p = make_param([1.0])
    p.grad = np.array([np.nan])
    opt = Adam({"p": p}, lr=0.1)
    with pytest.raises(NumericError, match="p"):
        opt.step()


def test_zero_grad_clears_accumulators():
    p = make_param([1.0])
    p.grad = np.array([3.0])
    opt = Adam({"p": p})
    opt.zero_grad()
    assert p.grad is None


def test_state_round_trip_preserves_moments():
    p = make_param([1.0, 2.0])
    opt = Adam({"p": p}, lr=0.05)
    for i in range(3):
        p.grad = np.array([1.0 + i, -1.0])
        opt.step()
    arrays = opt.state_arrays()
    assert set(arrays) == {"adam.m.p", "adam.v.p"}

    p2 = make_param([float(p.data[0]), float(p.data[1])])
    opt2 = Adam({"p": p2}, lr=0.05)
    opt2.load_state_arrays(arrays, t=opt.t)
    for opt_, p_ in ((opt, p), (opt2, p2)):
        p_.grad = np.array([0.3, 0.7])
        opt_.step()
    np.testing.assert_array_equal(p.data, p2.data)
