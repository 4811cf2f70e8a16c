"""Bundled gradient-check suite.

Each case builds a tiny double-precision problem around one primitive (or the
full two-layer network) and compares tape gradients against central finite
differences. All inputs are drawn away from non-smooth points: ReLU inputs
get a +-0.1 offset from zero and pooling windows contain distinct values, so
the finite-difference probe never crosses a kink.

``run_gradcheck_suite`` is what both the command line ``gradcheck`` command
and the acceptance tests call.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from . import heads, ops
from .config import EncoderConfig, GnnConfig, LossConfig, ModelConfig
from .gradcheck import GradCheckReport, grad_check
from .graph import Graph, batch_merge
from .model import SpatialGnnModel, compute_loss
from .tensor import Tensor

__all__ = ["suite_case_names", "run_gradcheck_suite"]


def _t(rng: np.random.Generator, *shape: int, shift: float = 0.0) -> Tensor:
    data = rng.normal(0.0, 1.0, shape)
    if shift:
        # Push values away from zero so ReLU/abs-style kinks stay distant.
        data = data + np.sign(data) * shift + np.where(data == 0, shift, 0.0)
    return Tensor(data.astype(np.float64), requires_grad=True)


def _weighted(x: Tensor, w: np.ndarray) -> Tensor:
    """Collapse any tensor to a scalar through a fixed smooth weighting."""
    flat = ops.reshape(x, (1, x.data.size))
    weight = Tensor(w.reshape(1, -1))
    return ops.reduce_sum(ops.linear(flat, weight))


def _case_conv(k: int, stride: int, padding: int, bias: bool, method: str):
    rng = np.random.default_rng([11, k, stride, padding, int(bias)])
    x = _t(rng, 2, 3, 6, 6)
    w = _t(rng, 4, 3, k, k)
    b = _t(rng, 4) if bias else None
    params = {"x": x, "w": w}
    if b is not None:
        params["b"] = b

    def forward():
        y = ops.conv2d(x, w, b, stride=stride, padding=padding, method=method)
        return _weighted(y, _readout_weights(y))
    return forward, params


def _readout_weights(y: Tensor) -> np.ndarray:
    return np.cos(np.arange(y.data.size, dtype=np.float64)).reshape(y.shape) + 1.5


def _case_batch_norm(mode: str):
    rng = np.random.default_rng([12, 0 if mode == "train" else 1])
    x = _t(rng, 3, 4, 5, 5)
    gamma = Tensor(1.0 + 0.2 * rng.normal(size=4), requires_grad=True)
    beta = _t(rng, 4)
    running_mean = rng.normal(size=4)
    running_var = 1.0 + rng.random(4)

    def forward():
        y = ops.batch_norm2d(x, gamma, beta, running_mean.copy(), running_var.copy(),
                             mode=mode, momentum=0.1)
        return _weighted(y, _readout_weights(y))
    return forward, {"x": x, "gamma": gamma, "beta": beta}


def _case_unary(op: Callable[[Tensor], Tensor], shift: float):
    rng = np.random.default_rng(13)
    x = _t(rng, 2, 3, 4, 4, shift=shift)

    def forward():
        y = op(x)
        return _weighted(y, _readout_weights(y))
    return forward, {"x": x}


def _case_dropout():
    rng = np.random.default_rng(14)
    x = _t(rng, 2, 3, 6, 6)

    def forward():
        # Fresh generator per call keeps the mask fixed across evaluations.
        y = ops.dropout(x, 0.4, "train", np.random.default_rng(99))
        return _weighted(y, _readout_weights(y))
    return forward, {"x": x}


def _case_max_pool():
    rng = np.random.default_rng(15)
    base = rng.permutation(2 * 2 * 6 * 6).astype(np.float64).reshape(2, 2, 6, 6)
    x = Tensor(base / 7.0, requires_grad=True)  # distinct entries: no ties

    def forward():
        y = ops.max_pool2d(x, 2, 2)
        return _weighted(y, _readout_weights(y))
    return forward, {"x": x}


def _case_avg_pool():
    rng = np.random.default_rng(16)
    x = _t(rng, 3, 4, 5, 6)

    def forward():
        y = ops.avg_pool_spatial(x)
        return _weighted(y, _readout_weights(y))
    return forward, {"x": x}


def _case_linear():
    rng = np.random.default_rng(17)
    x = _t(rng, 4, 5)
    w = _t(rng, 3, 5)
    b = _t(rng, 3)

    def forward():
        y = ops.linear(x, w, b)
        return _weighted(y, _readout_weights(y))
    return forward, {"x": x, "w": w, "b": b}


def _case_concat():
    rng = np.random.default_rng(18)
    a = _t(rng, 2, 2, 3, 3)
    b = _t(rng, 2, 3, 3, 3)
    c = _t(rng, 2, 1, 3, 3)

    def forward():
        y = ops.concat_channels([a, b, c])
        return _weighted(y, _readout_weights(y))
    return forward, {"a": a, "b": b, "c": c}


def _case_add_scale():
    rng = np.random.default_rng(19)
    a = _t(rng, 3, 4)
    b = _t(rng, 3, 4)

    def forward():
        y = ops.add(ops.scale(a, 1.7), b)
        return _weighted(y, _readout_weights(y))
    return forward, {"a": a, "b": b}


def _case_sum_list():
    rng = np.random.default_rng(20)
    parts = [_t(rng, 2, 3) for _ in range(3)]

    def forward():
        y = ops.sum_list(parts)
        return _weighted(y, _readout_weights(y))
    return forward, {f"p{i}": p for i, p in enumerate(parts)}


def _case_reshape_gather():
    rng = np.random.default_rng(21)
    x = _t(rng, 5, 2, 2)
    index = np.array([3, 0, 3, 1], dtype=np.int64)

    def forward():
        g = ops.gather_rows(x, index)
        y = ops.reshape(g, (4, 4))
        return _weighted(y, _readout_weights(y))
    return forward, {"x": x}


def _case_segments(mode: str):
    rng = np.random.default_rng([22, 0 if mode == "sum" else 1])
    x = _t(rng, 6, 3, 2, 2)
    seg = np.array([0, 0, 2, 2, 2, 3], dtype=np.int64)  # segment 1 left empty
    fn = ops.segment_sum if mode == "sum" else ops.segment_mean

    def forward():
        y = fn(x, seg, 4)
        return _weighted(y, _readout_weights(y))
    return forward, {"x": x}


def _case_sigmoid():
    return _case_unary(ops.sigmoid, shift=0.0)


def _case_cross_entropy():
    rng = np.random.default_rng(23)
    logits = _t(rng, 6, 4)
    targets = np.array([0, 1, 2, 3, 1, 2], dtype=np.int64)

    def forward():
        return heads.cross_entropy(logits, targets)
    return forward, {"logits": logits}


def _case_auc():
    rng = np.random.default_rng(24)
    logits = _t(rng, 5, 4)
    targets = np.array([2, 0, 3, 1, 2], dtype=np.int64)

    def forward():
        return heads.auc_ranking_loss(logits, targets)
    return forward, {"logits": logits}


def _case_composite():
    rng = np.random.default_rng(25)
    logits = _t(rng, 5, 3)
    targets = np.array([0, 2, 1, 1, 0], dtype=np.int64)

    def forward():
        return heads.composite_loss(logits, targets, gamma=0.7)
    return forward, {"logits": logits}


def _case_iou_composite():
    rng = np.random.default_rng(26)
    logits = _t(rng, 5, 3)
    raw = _t(rng, 5, 1)
    targets = np.array([0, 2, 1, 1, 0], dtype=np.int64)
    iou_true = rng.random(5)

    def forward():
        pred = ops.reshape(ops.sigmoid(raw), (5,))
        return heads.iou_composite_loss(logits, targets, pred, iou_true,
                                        alpha=1.0, beta=0.5)
    return forward, {"logits": logits, "raw": raw}


def _micro_model_case():
    """Full two-layer network on a two-graph batch, randomized parameters."""
    cfg = ModelConfig(
        in_channels=2, edge_feature_dim=1, classes=3, precision="double", seed=5,
        encoder=EncoderConfig(channels=(4,), dropout_rate=0.0, pool_min_spatial=2),
        gnn=GnnConfig(layers=2, aggregator_depth=1, dropout_rate=0.0,
                      zero_init_last=False),
        loss=LossConfig(kind="composite", gamma=0.5),
    )
    model = SpatialGnnModel(cfg)
    rng = np.random.default_rng(27)
    for name, p in model.params().items():
        if name.endswith(".gamma"):
            p.data = (1.0 + 0.2 * rng.normal(size=p.shape)).astype(np.float64)
        else:
            p.data = (0.3 * rng.normal(size=p.shape)).astype(np.float64)

    def graph(n_seed: int) -> Graph:
        g_rng = np.random.default_rng(n_seed)
        return Graph(
            node_features=g_rng.normal(size=(3, 2, 6, 6)).astype(np.float64),
            edge_index=np.array([[0, 1, 2], [2, 2, 0]], dtype=np.int64),
            edge_features=g_rng.random((3, 1)).astype(np.float64),
            graph_label=int(g_rng.integers(0, 3)),
        )

    batch = batch_merge([graph(31), graph(32)])
    params = model.params()

    def forward():
        bundle = model.forward(batch, "train", step=0)
        return compute_loss(bundle, cfg.loss)
    return forward, params


_CASES: list[tuple[str, Callable]] = [
    ("conv2d.k1", lambda: _case_conv(1, 1, 0, True, "im2col")),
    ("conv2d.k3.pad1", lambda: _case_conv(3, 1, 1, True, "im2col")),
    ("conv2d.k3.stride2", lambda: _case_conv(3, 2, 1, False, "im2col")),
    ("conv2d.k3.direct", lambda: _case_conv(3, 1, 1, True, "direct")),
    ("batch_norm2d.train", lambda: _case_batch_norm("train")),
    ("batch_norm2d.eval", lambda: _case_batch_norm("eval")),
    ("relu", lambda: _case_unary(ops.relu, shift=0.1)),
    ("sigmoid", _case_sigmoid),
    ("dropout.train", _case_dropout),
    ("max_pool2d", _case_max_pool),
    ("avg_pool_spatial", _case_avg_pool),
    ("linear", _case_linear),
    ("concat_channels", _case_concat),
    ("add.scale", _case_add_scale),
    ("sum_list", _case_sum_list),
    ("reshape.gather_rows", _case_reshape_gather),
    ("segment_sum", lambda: _case_segments("sum")),
    ("segment_mean", lambda: _case_segments("mean")),
    ("cross_entropy", _case_cross_entropy),
    ("auc_ranking_loss", _case_auc),
    ("composite_loss", _case_composite),
    ("iou_composite_loss", _case_iou_composite),
    ("micro_model.2layer", _micro_model_case),
]


def suite_case_names() -> list[str]:
    return [name for name, _ in _CASES]


def run_gradcheck_suite(epsilon: float = 1e-5,
                        only: Optional[str] = None) -> GradCheckReport:
    """Run every bundled case; ``only`` filters case names by substring."""
    merged = GradCheckReport(epsilon=epsilon)
    for name, build in _CASES:
        if only is not None and only not in name:
            continue
        forward, params = build()
        report = grad_check(forward, params, epsilon=epsilon)
        for row in report.rows:
            row.name = f"{name}/{row.name}"
            merged.rows.append(row)
    return merged
