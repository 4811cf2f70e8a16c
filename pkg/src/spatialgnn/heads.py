"""Readout heads and losses.

Node features are pooled over their full spatial extent (plain average) to a
descriptor per node; a linear head maps descriptors to class logits. A batch
can additionally be pooled per graph (mean or sum over each graph's nodes)
and classified with the same head, which is how graph-level targets such as
the detection-fusion label are trained.

Losses:

* ``cross_entropy`` - mean over samples of ``logsumexp(logits) - logit[y]``,
  computed max-shifted so large logits cannot overflow.
* ``auc_ranking_loss`` - mean over samples of the pairwise ranking surrogate
  ``sum_{j != y} softplus(logit_j - logit_y)`` with the numerically safe
  softplus ``max(x, 0) + log1p(exp(-|x|))``. With all-equal logits this is
  exactly ``(C - 1) * ln 2``.
* ``composite_loss`` - cross entropy plus ``gamma`` times the ranking loss.
* ``iou_composite_loss`` - ``alpha`` * cross entropy plus ``beta`` * mean
  squared error between a sigmoid-squashed IoU regression and its target.

Both classification heads are zero-initialized, so a fresh model emits all-
zero logits and the composite loss on balanced data starts at exactly
``ln C + gamma * (C - 1) * ln 2``.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .errors import ShapeError
from .graph import GraphBatch
from .layers import Layer, Linear
from .tensor import Tensor

__all__ = [
    "pool_nodes", "pool_graph", "ClassifierHead", "IouHead",
    "cross_entropy", "auc_ranking_loss", "composite_loss",
    "mean_squared_error", "iou_composite_loss",
]


def pool_nodes(x: Tensor) -> Tensor:
    """Spatial average pooling: ``[n, c, h, w] -> [n, c]``."""
    return ops.avg_pool_spatial(x)


def pool_graph(z: Tensor, batch: GraphBatch, mode: str = "mean") -> Tensor:
    """Pool node descriptors per graph: ``[sum N, d] -> [G, d]``."""
    if mode not in ("mean", "sum"):
        raise ValueError(f"pool_graph mode must be 'mean' or 'sum', got {mode!r}")
    if mode == "mean":
        return ops.segment_mean(z, batch.graph_ids, batch.num_graphs)
    return ops.segment_sum(z, batch.graph_ids, batch.num_graphs)


class ClassifierHead(Layer):
    """Linear map from pooled descriptors to class logits (zero-initialized)."""

    def __init__(self, name: str, d_in: int, classes: int, seed: int = 0,
                 dtype=np.float32, zero_init: bool = True):
        super().__init__(name)
        self.classes = classes
        self.fc = self.add_child(Linear(f"{name}.fc", d_in, classes, seed=seed,
                                        dtype=dtype, zero_init=zero_init))

    def forward(self, z: Tensor) -> Tensor:
        return self.fc.forward(z)


class IouHead(Layer):
    """Per-node IoU regression in [0, 1]: linear then sigmoid, ``[n, d] -> [n]``."""

    def __init__(self, name: str, d_in: int, seed: int = 0, dtype=np.float32,
                 zero_init: bool = True):
        super().__init__(name)
        self.fc = self.add_child(Linear(f"{name}.fc", d_in, 1, seed=seed,
                                        dtype=dtype, zero_init=zero_init))

    def forward(self, z: Tensor) -> Tensor:
        raw = self.fc.forward(z)
        return ops.reshape(ops.sigmoid(raw), (z.shape[0],))


# ---------------------------------------------------------------------------
# losses


def _check_logits_targets(logits: Tensor, targets: np.ndarray) -> np.ndarray:
    if logits.ndim != 2:
        raise ShapeError(f"logits must be [n, classes], got {logits.shape}")
    n, c = logits.shape
    if n < 1:
        raise ShapeError("losses need at least one sample")
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (n,):
        raise ShapeError(f"targets must be [{n}], got {targets.shape}")
    if targets.min() < 0 or targets.max() >= c:
        raise ShapeError(f"target out of range for {c} classes")
    return targets


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood with a max-shifted logsumexp."""
    targets = _check_logits_targets(logits, targets)
    n = logits.shape[0]
    d = logits.data
    shift = d.max(axis=1, keepdims=True)
    exps = np.exp(d - shift)
    lse = shift[:, 0] + np.log(exps.sum(axis=1))
    picked = d[np.arange(n), targets]
    out = Tensor(np.asarray((lse - picked).mean()))

    from .tensor import active_tape
    tape = active_tape()
    if tape is not None and logits.requires_grad:
        softmax = exps / exps.sum(axis=1, keepdims=True)

        def backward_rule(g: np.ndarray):
            grad = softmax.copy()
            grad[np.arange(n), targets] -= 1.0
            return (grad * (np.asarray(g).reshape(()) / n),)

        tape.record(out, (logits,), backward_rule)
    return out


def auc_ranking_loss(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Pairwise ranking surrogate, mean over samples of
    ``sum_{j != y} softplus(logit_j - logit_y)``."""
    targets = _check_logits_targets(logits, targets)
    n = logits.shape[0]
    d = logits.data
    diff = d - d[np.arange(n), targets][:, None]      # logit_j - logit_y
    sp = np.maximum(diff, 0.0) + np.log1p(np.exp(-np.abs(diff)))
    sp[np.arange(n), targets] = 0.0
    out = Tensor(np.asarray(sp.sum() / n))

    from .tensor import active_tape
    tape = active_tape()
    if tape is not None and logits.requires_grad:
        sig = np.empty_like(diff)
        pos = diff >= 0
        sig[pos] = 1.0 / (1.0 + np.exp(-diff[pos]))
        ex = np.exp(diff[~pos])
        sig[~pos] = ex / (1.0 + ex)
        sig[np.arange(n), targets] = 0.0

        def backward_rule(g: np.ndarray):
            grad = sig.copy()
            grad[np.arange(n), targets] = -sig.sum(axis=1)
            return (grad * (np.asarray(g).reshape(()) / n),)

        tape.record(out, (logits,), backward_rule)
    return out


def composite_loss(logits: Tensor, targets: np.ndarray, gamma: float = 1.0) -> Tensor:
    """Cross entropy plus ``gamma`` times the ranking surrogate."""
    ce = cross_entropy(logits, targets)
    if gamma == 0.0:
        return ce
    return ops.add(ce, ops.scale(auc_ranking_loss(logits, targets), gamma))


def mean_squared_error(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean of squared differences; ``target`` is a constant array."""
    target = np.asarray(target, dtype=pred.data.dtype)
    if target.shape != pred.shape:
        raise ShapeError(f"mse target shape {target.shape} != pred shape {pred.shape}")
    if pred.size < 1:
        raise ShapeError("mse needs at least one element")
    diff = pred.data - target
    out = Tensor(np.asarray((diff * diff).mean()))

    from .tensor import active_tape
    tape = active_tape()
    if tape is not None and pred.requires_grad:
        coef = 2.0 / pred.size

        def backward_rule(g: np.ndarray):
            return (diff * (coef * np.asarray(g).reshape(())),)

        tape.record(out, (pred,), backward_rule)
    return out


def iou_composite_loss(logits: Tensor, targets: np.ndarray, iou_pred: Tensor,
                       iou_target: np.ndarray, alpha: float = 1.0,
                       beta: float = 1.0) -> Tensor:
    """``alpha * cross_entropy + beta * mse(iou_pred, iou_target)``."""
    ce = ops.scale(cross_entropy(logits, targets), alpha)
    mse = ops.scale(mean_squared_error(iou_pred, iou_target), beta)
    return ops.add(ce, mse)
