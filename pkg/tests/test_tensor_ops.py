"""Core op semantics checked against independent reference implementations.

The convolution oracle below is a deliberately naive seven-loop version kept
separate from the library; the production path must match it to 1e-10.
"""

import numpy as np
import pytest

from spatialgnn import AutodiffError, ShapeError, Tape, Tensor, grad_check
from spatialgnn import ops


def conv2d_loops(x, w, b, stride, padding):
    """Seven-loop reference convolution (correlation, zero padding)."""
    n, c_in, h, wdt = x.shape
    c_out, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - k) // stride + 1
    ow = (wdt + 2 * padding - k) // stride + 1
    out = np.zeros((n, c_out, oh, ow), dtype=x.dtype)
    for ni in range(n):
        for co in range(c_out):
            for oi in range(oh):
                for oj in range(ow):
                    acc = 0.0
                    for ci in range(c_in):
                        for ki in range(k):
                            for kj in range(k):
                                acc += (xp[ni, ci, oi * stride + ki, oj * stride + kj]
                                        * w[co, ci, ki, kj])
                    out[ni, co, oi, oj] = acc + (b[co] if b is not None else 0.0)
    return out


@pytest.mark.parametrize("k,stride,padding", [
    (1, 1, 0), (1, 2, 0), (3, 1, 0), (3, 1, 1), (3, 2, 1), (3, 2, 0),
])
@pytest.mark.parametrize("bias", [True, False])
def test_conv2d_matches_loop_oracle(k, stride, padding, bias):
    rng = np.random.default_rng([51, k, stride, padding, int(bias)])
    x = rng.normal(size=(2, 3, 7, 6))
    w = rng.normal(size=(4, 3, k, k))
    b = rng.normal(size=4) if bias else None
    want = conv2d_loops(x, w, b, stride, padding)
    got = ops.conv2d(Tensor(x), Tensor(w), None if b is None else Tensor(b),
                     stride=stride, padding=padding)
    assert np.max(np.abs(got.data - want)) <= 1e-10


def test_conv2d_direct_method_equals_default():
    rng = np.random.default_rng(52)
    x = Tensor(rng.normal(size=(2, 3, 8, 8)))
    w = Tensor(rng.normal(size=(5, 3, 3, 3)))
    b = Tensor(rng.normal(size=5))
    fast = ops.conv2d(x, w, b, stride=2, padding=1)
    slow = ops.conv2d(x, w, b, stride=2, padding=1, method="direct")
    # matmul and the explicit loop sum in different orders; only float
    # round-off may differ
    assert np.max(np.abs(fast.data - slow.data)) <= 1e-12


@pytest.mark.parametrize("shape", [(1, 1, 3, 3), (2, 2, 5, 4), (3, 4, 6, 6)])
def test_conv2d_gradients(shape):
    rng = np.random.default_rng([53, *shape])
    x = Tensor(rng.normal(size=shape), requires_grad=True)
    w = Tensor(rng.normal(size=(3, shape[1], 3, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=3), requires_grad=True)
    weights = rng.normal(size=(1,))  # placeholder to keep rng deterministic

    def forward():
        y = ops.conv2d(x, w, b, stride=1, padding=1)
        flat = ops.reshape(y, (1, y.data.size))
        proj = Tensor(np.cos(np.arange(y.data.size)).reshape(1, -1) + 1.2)
        return ops.reduce_sum(ops.linear(flat, proj))

    report = grad_check(forward, {"x": x, "w": w, "b": b}, epsilon=1e-5)
    assert report.max_rel_err < 1e-6, report.format_lines(1e-6)


def test_conv2d_rejects_bad_kernel_and_shapes():
    x = Tensor(np.zeros((1, 3, 5, 5)))
    with pytest.raises(ShapeError):
        ops.conv2d(x, Tensor(np.zeros((4, 3, 5, 5))))  # kernel size not 1 or 3
    with pytest.raises(ShapeError):
        ops.conv2d(x, Tensor(np.zeros((4, 2, 3, 3))))  # channel mismatch
    with pytest.raises(ShapeError):
        ops.conv2d(Tensor(np.zeros((1, 3, 2, 2))), Tensor(np.zeros((4, 3, 3, 3))))


# --- batch normalization ----------------------------------------------------


def test_batch_norm_train_normalizes_batch():
    rng = np.random.default_rng(54)
    x = Tensor(rng.normal(3.0, 2.5, size=(4, 3, 6, 6)))
    gamma, beta = Tensor(np.ones(3)), Tensor(np.zeros(3))
    rm, rv = np.zeros(3), np.ones(3)
    y = ops.batch_norm2d(x, gamma, beta, rm, rv, mode="train").data
    assert np.max(np.abs(y.mean(axis=(0, 2, 3)))) < 1e-12
    # output variance is var/(var+eps), i.e. 1 up to the 1e-5 stabilizer
    assert np.max(np.abs(y.var(axis=(0, 2, 3)) - 1.0)) < 1e-4


def test_batch_norm_running_stats_follow_momentum_rule():
    rng = np.random.default_rng(55)
    x = rng.normal(1.0, 2.0, size=(2, 2, 3, 3))
    rm, rv = np.array([0.5, -0.5]), np.array([2.0, 3.0])
    m = 2 * 3 * 3
    want_rm = 0.9 * rm + 0.1 * x.mean(axis=(0, 2, 3))
    want_rv = 0.9 * rv + 0.1 * x.var(axis=(0, 2, 3)) * m / (m - 1)
    ops.batch_norm2d(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                     rm, rv, mode="train", momentum=0.1)
    np.testing.assert_allclose(rm, want_rm, rtol=0, atol=1e-14)
    np.testing.assert_allclose(rv, want_rv, rtol=0, atol=1e-14)


def test_batch_norm_eval_uses_running_stats_only():
    rng = np.random.default_rng(56)
    x = rng.normal(size=(3, 2, 4, 4))
    rm, rv = np.array([1.0, -2.0]), np.array([4.0, 0.25])
    gamma, beta = np.array([2.0, 0.5]), np.array([0.1, -0.3])
    y = ops.batch_norm2d(Tensor(x), Tensor(gamma), Tensor(beta), rm.copy(), rv.copy(),
                         mode="eval").data
    want = gamma[None, :, None, None] * (x - rm[None, :, None, None]) \
        / np.sqrt(rv[None, :, None, None] + 1e-5) + beta[None, :, None, None]
    np.testing.assert_allclose(y, want, rtol=0, atol=1e-12)
    # eval must not touch the buffers
    rm2, rv2 = rm.copy(), rv.copy()
    ops.batch_norm2d(Tensor(x), Tensor(gamma), Tensor(beta), rm2, rv2, mode="eval")
    np.testing.assert_array_equal(rm2, rm)
    np.testing.assert_array_equal(rv2, rv)


def test_batch_norm_train_rejects_single_value_batches():
    with pytest.raises(ShapeError):
        ops.batch_norm2d(Tensor(np.zeros((1, 2, 1, 1))), Tensor(np.ones(2)),
                         Tensor(np.zeros(2)), np.zeros(2), np.ones(2), mode="train")


# --- activations and dropout ------------------------------------------------


def test_relu_and_sigmoid_values():
    x = Tensor(np.array([[-2.0, 0.0, 3.0]]))
    np.testing.assert_array_equal(ops.relu(x).data, [[0.0, 0.0, 3.0]])
    s = ops.sigmoid(Tensor(np.array([[0.0, 710.0, -710.0]]))).data
    assert s[0, 0] == 0.5
    assert np.all(np.isfinite(s))  # large magnitudes must not overflow
    assert s[0, 1] == pytest.approx(1.0) and s[0, 2] == pytest.approx(0.0)


def test_dropout_eval_and_zero_rate_are_identity_objects():
    x = Tensor(np.ones((2, 3)))
    rng = np.random.default_rng(0)
    assert ops.dropout(x, 0.5, "eval", rng) is x
    assert ops.dropout(x, 0.0, "train", rng) is x


def test_dropout_train_statistics():
    # law of large numbers: survivor fraction and rescaled mean within ~2%
    rng = np.random.default_rng(57)
    x = Tensor(np.full((200, 500), 3.0))
    y = ops.dropout(x, 0.3, "train", rng).data
    zeros = float((y == 0).mean())
    assert abs(zeros - 0.3) < 0.02
    assert abs(y.mean() - 3.0) < 0.06
    survivors = y[y != 0]
    np.testing.assert_allclose(survivors, 3.0 / 0.7)


def test_dropout_gradient_masks_like_forward():
    rng = np.random.default_rng(58)
    x = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    with Tape() as tape:
        y = ops.dropout(x, 0.4, "train", np.random.default_rng(9))
        loss = ops.reduce_sum(y)
    tape.backward(loss)
    mask = (ops.dropout(Tensor(x.data), 0.4, "train",
                        np.random.default_rng(9)).data != 0)
    want = np.where(mask, 1.0 / 0.6, 0.0)
    np.testing.assert_allclose(x.grad, want, rtol=0, atol=1e-15)


# --- pooling ----------------------------------------------------------------


def test_max_pool_floor_semantics_and_values():
    x = np.arange(2 * 1 * 5 * 5, dtype=np.float64).reshape(2, 1, 5, 5)
    y = ops.max_pool2d(Tensor(x), 2, 2)
    assert y.shape == (2, 1, 2, 2)  # 5 -> floor((5-2)/2)+1 = 2, last row/col dropped
    np.testing.assert_array_equal(y.data[0, 0], [[6.0, 8.0], [16.0, 18.0]])


def test_max_pool_gradient_goes_to_first_max_on_ties():
    x = Tensor(np.full((1, 1, 2, 2), 7.0), requires_grad=True)
    with Tape() as tape:
        loss = ops.reduce_sum(ops.max_pool2d(x, 2, 2))
    tape.backward(loss)
    want = np.zeros((1, 1, 2, 2))
    want[0, 0, 0, 0] = 1.0  # all four tie; row-major argmax picks the first
    np.testing.assert_array_equal(x.grad, want)


def test_avg_pool_spatial_is_exact_mean():
    rng = np.random.default_rng(59)
    x = rng.normal(size=(3, 4, 5, 7))
    y = ops.avg_pool_spatial(Tensor(x))
    np.testing.assert_allclose(y.data, x.mean(axis=(2, 3)), rtol=0, atol=1e-15)


# --- linear algebra and structure ops ----------------------------------------


def test_linear_matches_numpy():
    rng = np.random.default_rng(60)
    x, w, b = rng.normal(size=(5, 4)), rng.normal(size=(3, 4)), rng.normal(size=3)
    y = ops.linear(Tensor(x), Tensor(w), Tensor(b))
    np.testing.assert_allclose(y.data, x @ w.T + b, rtol=0, atol=1e-13)


def test_concat_add_scale_sum_reduce_reshape():
    rng = np.random.default_rng(61)
    a = rng.normal(size=(2, 2, 3, 3))
    b = rng.normal(size=(2, 3, 3, 3))
    cat = ops.concat_channels([Tensor(a), Tensor(b)])
    np.testing.assert_array_equal(cat.data, np.concatenate([a, b], axis=1))

    s = ops.add(Tensor(a), Tensor(a.copy()))
    np.testing.assert_array_equal(s.data, 2 * a)
    with pytest.raises(ShapeError):
        ops.add(Tensor(a), Tensor(b))  # no broadcasting by design

    np.testing.assert_array_equal(ops.scale(Tensor(a), -1.5).data, -1.5 * a)
    np.testing.assert_allclose(ops.reduce_sum(Tensor(a)).item(), a.sum(), atol=1e-12)
    np.testing.assert_array_equal(ops.reshape(Tensor(a), (4, 9)).data, a.reshape(4, 9))

    parts = [rng.normal(size=(3, 2)) for _ in range(4)]
    total = ops.sum_list([Tensor(p) for p in parts])
    np.testing.assert_allclose(total.data, sum(parts), atol=1e-14)
    empty = ops.sum_list([], shape=(2, 5), dtype=np.float64)
    np.testing.assert_array_equal(empty.data, np.zeros((2, 5)))


def test_gather_rows_accumulates_duplicate_gradients():
    x = Tensor(np.arange(6, dtype=np.float64).reshape(3, 2), requires_grad=True)
    idx = np.array([1, 1, 0], dtype=np.int64)
    with Tape() as tape:
        g = ops.gather_rows(x, idx)
        loss = ops.reduce_sum(g)
    tape.backward(loss)
    np.testing.assert_array_equal(g.data, x.data[idx])
    np.testing.assert_array_equal(x.grad, [[1.0, 1.0], [2.0, 2.0], [0.0, 0.0]])


def test_segment_ops_with_empty_segments():
    x = np.array([[1.0], [2.0], [4.0], [8.0]])
    seg = np.array([0, 0, 2, 2], dtype=np.int64)
    total = ops.segment_sum(Tensor(x), seg, 3)
    np.testing.assert_array_equal(total.data, [[3.0], [0.0], [12.0]])
    mean = ops.segment_mean(Tensor(x), seg, 3)
    np.testing.assert_array_equal(mean.data, [[1.5], [0.0], [6.0]])


# --- tape semantics -----------------------------------------------------------


def test_tape_backward_consumed_once():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with Tape() as tape:
        loss = ops.reduce_sum(ops.scale(x, 2.0))
    tape.backward(loss)
    with pytest.raises(AutodiffError):
        tape.backward(loss)


def test_tape_rejects_non_scalar_and_detached_losses():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with Tape() as tape:
        y = ops.scale(x, 2.0)
    with pytest.raises(ShapeError):
        tape.backward(y)
    with Tape() as tape2:
        ops.scale(x, 2.0)
    stray = Tensor(np.array(1.0))
    with pytest.raises(AutodiffError):
        tape2.backward(stray)


def test_nested_tapes_are_rejected():
    with Tape():
        with pytest.raises(AutodiffError):
            Tape().__enter__()


def test_gradients_accumulate_across_backwards():
    x = Tensor(np.ones(3).reshape(1, 3), requires_grad=True)
    for _ in range(2):
        with Tape() as tape:
            loss = ops.reduce_sum(ops.scale(x, 3.0))
        tape.backward(loss)
    np.testing.assert_array_equal(x.grad, np.full((1, 3), 6.0))


def test_untaped_ops_do_not_record():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    y = ops.scale(x, 2.0)  # no active tape
    assert y.grad is None
    assert not y.requires_grad
