"""CNN encoder that turns raw node patches into spatial feature maps.

The encoder is a stack of residual blocks (conv-BN-ReLU-conv-BN, skip add,
final ReLU; a 1x1 projection joins the skip exactly when the block changes
channel count). After every block the map is max-pooled 2x2/stride-2, but
only while both spatial dims exceed ``pool_min_spatial``; small maps pass
through untouched so deep stacks cannot pool themselves into nothing. A
dropout stage follows each pool.

An optional pre-encoder (one conv-BN-ReLU stage) can lift the raw channels
first; disabled, the raw patches feed the first block directly.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .layers import BatchNorm2d, Conv2d, Dropout, Layer
from .tensor import Tensor

__all__ = ["PreEncoder", "ResidualBlock", "CnnEncoder", "safe_max_pool",
           "effective_receptive_field"]


def effective_receptive_field(r: int, num_layers: int) -> int:
    """Receptive field of ``num_layers`` stacked stride-1 convs of size ``r``:
    r + (num_layers - 1) * (r - 1). For 3x3 convs: 3, 5, 7, ..."""
    if r < 1 or num_layers < 1:
        raise ValueError("kernel size and layer count must be positive")
    return r + (num_layers - 1) * (r - 1)


def safe_max_pool(x: Tensor, min_spatial: int) -> Tensor:
    """2x2 stride-2 max pool applied only when min(h, w) > min_spatial;
    otherwise the input is returned unchanged (floor semantics when applied)."""
    h, w = x.shape[2], x.shape[3]
    if min(h, w) > min_spatial:
        return ops.max_pool2d(x, k=2, stride=2)
    return x


class PreEncoder(Layer):
    def __init__(self, name: str, c_in: int, c_out: int, seed: int = 0,
                 dtype=np.float32, bn_momentum: float = 0.1):
        super().__init__(name)
        self.conv = self.add_child(Conv2d(f"{name}.conv", c_in, c_out, 3, padding=1,
                                          seed=seed, dtype=dtype))
        self.bn = self.add_child(BatchNorm2d(f"{name}.bn", c_out, momentum=bn_momentum,
                                             dtype=dtype))

    def forward(self, x: Tensor, mode: str) -> Tensor:
        return ops.relu(self.bn.forward(self.conv.forward(x), mode))


class ResidualBlock(Layer):
    def __init__(self, name: str, c_in: int, c_out: int, seed: int = 0,
                 dtype=np.float32, bn_momentum: float = 0.1):
        super().__init__(name)
        self.conv1 = self.add_child(Conv2d(f"{name}.conv1", c_in, c_out, 3, padding=1,
                                           seed=seed, dtype=dtype))
        self.bn1 = self.add_child(BatchNorm2d(f"{name}.bn1", c_out, momentum=bn_momentum,
                                              dtype=dtype))
        self.conv2 = self.add_child(Conv2d(f"{name}.conv2", c_out, c_out, 3, padding=1,
                                           seed=seed, dtype=dtype))
        self.bn2 = self.add_child(BatchNorm2d(f"{name}.bn2", c_out, momentum=bn_momentum,
                                              dtype=dtype))
        self.proj = None
        if c_in != c_out:
            self.proj = self.add_child(Conv2d(f"{name}.proj", c_in, c_out, 1,
                                              seed=seed, dtype=dtype))

    def forward(self, x: Tensor, mode: str) -> Tensor:
        h = ops.relu(self.bn1.forward(self.conv1.forward(x), mode))
        h = self.bn2.forward(self.conv2.forward(h), mode)
        skip = self.proj.forward(x) if self.proj is not None else x
        return ops.relu(ops.add(skip, h))


class CnnEncoder(Layer):
    """Residual blocks with safe pooling and dropout between them."""

    def __init__(self, name: str, c_in: int, channels: tuple[int, ...],
                 dropout_rate: float = 0.3, pool_min_spatial: int = 4,
                 seed: int = 0, dtype=np.float32, bn_momentum: float = 0.1):
        super().__init__(name)
        if not channels:
            raise ValueError("encoder needs at least one block")
        self.pool_min_spatial = pool_min_spatial
        self.blocks: list[ResidualBlock] = []
        self.drops: list[Dropout] = []
        prev = c_in
        for i, c in enumerate(channels):
            self.blocks.append(self.add_child(ResidualBlock(
                f"{name}.block{i}", prev, c, seed=seed, dtype=dtype,
                bn_momentum=bn_momentum)))
            self.drops.append(self.add_child(Dropout(f"{name}.drop{i}", dropout_rate,
                                                     seed=seed)))
            prev = c
        self.out_channels = prev

    def forward(self, x: Tensor, mode: str, step: int = 0) -> Tensor:
        for block, drop in zip(self.blocks, self.drops):
            x = block.forward(x, mode)
            x = safe_max_pool(x, self.pool_min_spatial)
            x = drop.forward(x, mode, step)
        return x

    def output_hw(self, h: int, w: int) -> tuple[int, int, int]:
        """Spatial dims after the stack and how many pools actually fired."""
        pools = 0
        for _ in self.blocks:
            if min(h, w) > self.pool_min_spatial:
                h = (h - 2) // 2 + 1
                w = (w - 2) // 2 + 1
                pools += 1
        return h, w, pools
