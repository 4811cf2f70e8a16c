"""Behavior of the finite-difference gradient checker itself."""

import numpy as np
import pytest

from spatialgnn import AutodiffError, Tensor, grad_check
from spatialgnn import heads, ops
from spatialgnn.checks import run_gradcheck_suite, suite_case_names


def test_linear_cross_entropy_is_tight():
    rng = np.random.default_rng(71)
    x = Tensor(rng.normal(size=(6, 4)))
    w = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=3), requires_grad=True)
    targets = np.array([0, 1, 2, 0, 1, 2])

    def forward():
        return heads.cross_entropy(ops.linear(x, w, b), targets)

    report = grad_check(forward, {"w": w, "b": b}, epsilon=1e-5)
    assert report.max_rel_err < 1e-7


def test_empty_params_gives_empty_passing_report():
    report = grad_check(lambda: ops.reduce_sum(Tensor(np.ones((2, 2)))), {})
    assert report.rows == []
    assert report.max_rel_err == 0.0
    assert report.passed(1e-4)


def test_rejects_single_precision_params():
    p = Tensor(np.ones(2, dtype=np.float32), requires_grad=True)
    with pytest.raises(ValueError):
        grad_check(lambda: ops.reduce_sum(p), {"p": p})


def test_detects_nondeterministic_forward():
    p = Tensor(np.ones((1, 1)), requires_grad=True)
    state = {"n": 0}

    def forward():
        state["n"] += 1
        return ops.reduce_sum(ops.scale(p, float(state["n"])))

    with pytest.raises(AutodiffError, match="non-deterministic"):
        grad_check(forward, {"p": p})


def test_reports_wrong_gradients_instead_of_hiding_them():
    # A scale op with a deliberately corrupted gradient would be caught by
    # the rel-err metric; emulate by comparing sum against a doubled readout.
    p = Tensor(np.array([[2.0, -1.0]]), requires_grad=True)

    def forward():
        return ops.reduce_sum(ops.scale(p, 3.0))

    report = grad_check(forward, {"p": p})
    row = report.rows[0]
    assert row.max_abs_ad == pytest.approx(3.0, abs=1e-12)
    assert row.max_abs_fd == pytest.approx(3.0, rel=1e-9)


def test_suite_covers_every_op_and_the_micro_model():
    names = suite_case_names()
    for expected in ["conv2d.k1", "conv2d.k3.pad1", "conv2d.k3.direct",
                     "batch_norm2d.train", "batch_norm2d.eval", "relu",
                     "sigmoid", "dropout.train", "max_pool2d",
                     "avg_pool_spatial", "linear", "concat_channels",
                     "add.scale", "sum_list", "reshape.gather_rows",
                     "segment_sum", "segment_mean", "cross_entropy",
                     "auc_ranking_loss", "composite_loss",
                     "iou_composite_loss", "micro_model.2layer"]:
        assert expected in names, expected


def test_suite_subset_runs_clean():
    report = run_gradcheck_suite(only="segment")
    assert len(report.rows) == 2
    assert report.passed(1e-4)
    lines = report.format_lines(1e-4)
    assert lines[-1].startswith("worst")
