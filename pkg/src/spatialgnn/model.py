"""The assembled model: encoder -> GNN layers -> pooled readout heads.

``forward`` runs the full pipeline on a :class:`~spatialgnn.graph.GraphBatch`
and returns a :class:`PredictionBundle` carrying node-level logits, optional
graph-level logits (nodes pooled per graph and pushed through the same head)
and the optional per-node IoU regression. Any stage failure is re-raised as
:class:`StageError` naming the stage.

Precision is model-wide: ``single`` for training speed, ``double`` for
gradient checking and the bitwise resume guarantees.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import heads, ops
from .config import LossConfig, ModelConfig
from .encoder import CnnEncoder, PreEncoder
from .errors import NumericError, StageError
from .graph import GraphBatch
from .layers import Layer
from .message_passing import SpatialGnnLayer
from .tensor import Tensor

__all__ = ["PredictionBundle", "SpatialGnnModel", "compute_loss"]


@dataclass
class PredictionBundle:
    node_logits: Tensor                      # [sum N, classes]
    graph_logits: Optional[Tensor]           # [G, classes] or None
    iou_pred: Optional[Tensor]               # [sum N] or None
    node_labels: Optional[np.ndarray]        # from the batch, may be None
    graph_labels: Optional[np.ndarray]


class SpatialGnnModel(Layer):
    def __init__(self, cfg: ModelConfig):
        cfg.validate()
        super().__init__("model")
        self.cfg = cfg
        dtype = cfg.dtype
        seed = cfg.seed

        self.pre: Optional[PreEncoder] = None
        c = cfg.in_channels
        if cfg.encoder.use_preencoder:
            self.pre = self.add_child(PreEncoder(
                "model.pre", c, cfg.encoder.pre_channels, seed=seed, dtype=dtype,
                bn_momentum=cfg.encoder.bn_momentum))
            c = cfg.encoder.pre_channels

        self.encoder = self.add_child(CnnEncoder(
            "model.encoder", c, tuple(cfg.encoder.channels),
            dropout_rate=cfg.encoder.dropout_rate,
            pool_min_spatial=cfg.encoder.pool_min_spatial,
            seed=seed, dtype=dtype, bn_momentum=cfg.encoder.bn_momentum))

        gnn_channels = cfg.gnn.channels or self.encoder.out_channels
        self.gnn_layers: list[SpatialGnnLayer] = []
        prev = self.encoder.out_channels
        for i in range(cfg.gnn.layers):
            self.gnn_layers.append(self.add_child(SpatialGnnLayer(
                f"model.gnn{i}", prev, gnn_channels, cfg.edge_feature_dim,
                aggregator_depth=cfg.gnn.aggregator_depth,
                dropout_rate=cfg.gnn.dropout_rate,
                zero_init_last=cfg.gnn.zero_init_last,
                message_bias=cfg.gnn.message_bias,
                seed=seed, dtype=dtype, bn_momentum=cfg.encoder.bn_momentum)))
            prev = gnn_channels

        self.head = self.add_child(heads.ClassifierHead(
            "model.head", prev, cfg.classes, seed=seed, dtype=dtype))
        self.iou_head: Optional[heads.IouHead] = None
        if cfg.use_iou_head:
            self.iou_head = self.add_child(heads.IouHead(
                "model.iou_head", prev, seed=seed, dtype=dtype))

    # -- pipeline -----------------------------------------------------------

    def forward(self, batch: GraphBatch, mode: str, step: int = 0) -> PredictionBundle:
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        x = Tensor(batch.node_features.astype(self.cfg.dtype, copy=False))

        stage = "pre_encoder"
        try:
            if self.pre is not None:
                x = self.pre.forward(x, mode)
            stage = "encoder"
            x = self.encoder.forward(x, mode, step)
            for i, layer in enumerate(self.gnn_layers):
                stage = f"gnn_layer_{i}"
                x = layer.forward(x, batch, mode, step)
            stage = "heads"
            z = heads.pool_nodes(x)
            node_logits = self.head.forward(z)
            graph_logits = None
            if self.cfg.graph_pool != "none":
                zg = heads.pool_graph(z, batch, self.cfg.graph_pool)
                graph_logits = self.head.forward(zg)
            iou_pred = self.iou_head.forward(z) if self.iou_head is not None else None
        except (StageError, NumericError):
            raise
        except Exception as exc:
            raise StageError(stage, exc) from exc

        if not np.all(np.isfinite(node_logits.data)):
            raise NumericError(f"non-finite logits out of stage '{stage}'")
        return PredictionBundle(
            node_logits=node_logits,
            graph_logits=graph_logits,
            iou_pred=iou_pred,
            node_labels=batch.node_labels,
            graph_labels=batch.graph_labels,
        )

    def output_hw(self, h: int, w: int) -> tuple[int, int, int]:
        """Feature-map dims entering the GNN for ``h x w`` inputs, plus pool count."""
        return self.encoder.output_hw(h, w)


def compute_loss(bundle: PredictionBundle, cfg: LossConfig,
                 node_iou: Optional[np.ndarray] = None) -> Tensor:
    """Pick the supervision level and apply the configured loss.

    Graph-level labels win when both the pooled logits and the labels exist
    (the detection-fusion setup); otherwise node-level labels are required.
    """
    if bundle.graph_logits is not None and bundle.graph_labels is not None:
        logits, targets = bundle.graph_logits, bundle.graph_labels
    elif bundle.node_labels is not None:
        logits, targets = bundle.node_logits, bundle.node_labels
    else:
        raise ValueError("batch carries no usable labels for the loss")

    if cfg.kind == "composite":
        return heads.composite_loss(logits, targets, cfg.gamma)
    if cfg.kind == "iou_composite":
        if bundle.iou_pred is None:
            raise ValueError("iou_composite loss needs the IoU head enabled")
        if node_iou is None:
            raise ValueError("iou_composite loss needs per-node IoU targets")
        return heads.iou_composite_loss(logits, targets, bundle.iou_pred,
                                        node_iou, cfg.alpha, cfg.beta)
    raise ValueError(f"unknown loss kind {cfg.kind!r}")
