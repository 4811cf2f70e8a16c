"""Convolutional message passing over spatial node features.

For every directed edge (i -> j) the message is a 1x1 convolution applied to
the channel concatenation of the source features, the destination features
and the edge features broadcast to constant spatial channels:

    message(i -> j) = conv1x1(concat(x_i, x_j, edge_ij))

Messages into each node are summed (a node with no incoming edges receives
zeros), refined by a small CNN aggregator (stages of 3x3 conv - BN - dropout
- ReLU, padding 1), and added back residually:

    x'_j = x_j + aggregator(sum of messages into j)

With the aggregator's final conv zero-initialized the whole layer starts as
the identity, which keeps early training stable. A 1x1 projection on the
residual path appears only when the layer changes channel count.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .graph import GraphBatch
from .layers import BatchNorm2d, Conv2d, Dropout, Layer
from .tensor import Tensor

__all__ = ["spatialize_edge_features", "ConvMessagePassing", "ConvAggregator",
           "SpatialGnnLayer"]


def spatialize_edge_features(edge_features: np.ndarray, h: int, w: int,
                             dtype) -> Tensor:
    """Broadcast ``[E, F]`` edge vectors to constant ``[E, F, h, w]`` channels.

    Edge features are inputs, not parameters, so the result carries no grad.
    """
    e, f = edge_features.shape
    data = np.broadcast_to(
        edge_features.astype(dtype)[:, :, None, None], (e, f, h, w)
    ).copy()
    return Tensor(data)


class ConvMessagePassing(Layer):
    def __init__(self, name: str, c_in: int, c_out: int, edge_dim: int,
                 bias: bool = True, seed: int = 0, dtype=np.float32):
        super().__init__(name)
        self.edge_dim = edge_dim
        self.conv = self.add_child(Conv2d(f"{name}.conv", 2 * c_in + edge_dim, c_out, 1,
                                          bias=bias, seed=seed, dtype=dtype))

    def forward(self, x: Tensor, edge_index: np.ndarray,
                edge_features: np.ndarray) -> Tensor:
        """Per-edge messages ``[E, c_out, h, w]`` for node features ``[N, c, h, w]``."""
        src, dst = edge_index
        h, w = x.shape[2], x.shape[3]
        parts = [ops.gather_rows(x, src), ops.gather_rows(x, dst)]
        if self.edge_dim:
            parts.append(spatialize_edge_features(edge_features, h, w, x.dtype))
        return self.conv.forward(ops.concat_channels(parts))


class ConvAggregator(Layer):
    """Deep refinement of summed messages: K stages of conv3x3-BN-dropout-ReLU."""

    def __init__(self, name: str, channels: int, depth: int = 1,
                 dropout_rate: float = 0.0, zero_init_last: bool = True,
                 seed: int = 0, dtype=np.float32, bn_momentum: float = 0.1):
        super().__init__(name)
        if depth < 1:
            raise ValueError("aggregator depth must be >= 1")
        self.convs: list[Conv2d] = []
        self.bns: list[BatchNorm2d] = []
        self.drops: list[Dropout] = []
        for k in range(depth):
            zero = zero_init_last and k == depth - 1
            self.convs.append(self.add_child(Conv2d(
                f"{name}.stage{k}.conv", channels, channels, 3, padding=1,
                seed=seed, dtype=dtype, zero_init=zero)))
            self.bns.append(self.add_child(BatchNorm2d(
                f"{name}.stage{k}.bn", channels, momentum=bn_momentum, dtype=dtype)))
            self.drops.append(self.add_child(Dropout(
                f"{name}.stage{k}.drop", dropout_rate, seed=seed)))

    def forward(self, m: Tensor, mode: str, step: int = 0) -> Tensor:
        for conv, bn, drop in zip(self.convs, self.bns, self.drops):
            m = ops.relu(drop.forward(bn.forward(conv.forward(m), mode), mode, step))
        return m


class SpatialGnnLayer(Layer):
    """One round of message passing, sum aggregation and residual update."""

    def __init__(self, name: str, c_in: int, c_out: int, edge_dim: int,
                 aggregator_depth: int = 1, dropout_rate: float = 0.0,
                 zero_init_last: bool = True, message_bias: bool = True,
                 seed: int = 0, dtype=np.float32, bn_momentum: float = 0.1):
        super().__init__(name)
        self.messages = self.add_child(ConvMessagePassing(
            f"{name}.msg", c_in, c_out, edge_dim, bias=message_bias,
            seed=seed, dtype=dtype))
        self.aggregator = self.add_child(ConvAggregator(
            f"{name}.agg", c_out, aggregator_depth, dropout_rate,
            zero_init_last, seed=seed, dtype=dtype, bn_momentum=bn_momentum))
        self.proj = None
        if c_in != c_out:
            self.proj = self.add_child(Conv2d(f"{name}.proj", c_in, c_out, 1,
                                              seed=seed, dtype=dtype))

    def forward(self, x: Tensor, batch: GraphBatch, mode: str, step: int = 0) -> Tensor:
        msgs = self.messages.forward(x, batch.edge_index, batch.edge_features)
        summed = ops.segment_sum(msgs, batch.edge_index[1], batch.num_nodes)
        refined = self.aggregator.forward(summed, mode, step)
        skip = self.proj.forward(x) if self.proj is not None else x
        return ops.add(skip, refined)
