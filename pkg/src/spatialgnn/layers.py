"""Parameter-owning layers.

A :class:`Layer` is a tiny registry: it owns named parameters (trainable
tensors), named buffers (plain arrays such as batch-norm running stats) and
child layers, and can walk them into flat ``full_name -> value`` maps for the
optimizer and the checkpoint writer.

Initialization is stateless and order-independent: every parameter draws from
``default_rng([seed, INIT_DOMAIN, crc32(full_name)])``, so the same config and
seed reproduce identical weights no matter when layers get built. Weights use
He fan-in scaling; biases, batch-norm shifts and anything flagged
``zero_init`` start at zero.
"""

from __future__ import annotations

import zlib
from typing import Optional

import numpy as np

from . import ops
from .tensor import Tensor

__all__ = ["Layer", "Conv2d", "BatchNorm2d", "Linear", "Dropout", "name_hash"]

INIT_DOMAIN = 1
DROPOUT_DOMAIN = 2


def name_hash(name: str) -> int:
    """Stable 32-bit hash of a layer/parameter path (crc32)."""
    return zlib.crc32(name.encode("utf-8"))


def _init_rng(seed: int, full_name: str) -> np.random.Generator:
    return np.random.default_rng([seed, INIT_DOMAIN, name_hash(full_name)])


def he_normal(shape: tuple, fan_in: int, seed: int, full_name: str, dtype) -> np.ndarray:
    rng = _init_rng(seed, full_name)
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)


class Layer:
    def __init__(self, name: str):
        self.name = name
        self._params: dict[str, Tensor] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self._children: list["Layer"] = []

    def register_param(self, local: str, data: np.ndarray) -> Tensor:
        t = Tensor(data, requires_grad=True, name=f"{self.name}.{local}")
        self._params[local] = t
        return t

    def register_buffer(self, local: str, data: np.ndarray) -> np.ndarray:
        self._buffers[local] = data
        return data

    def add_child(self, child: "Layer") -> "Layer":
        self._children.append(child)
        return child

    def params(self) -> dict[str, Tensor]:
        out = {f"{self.name}.{k}": v for k, v in self._params.items()}
        for ch in self._children:
            out.update(ch.params())
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = {f"{self.name}.{k}": v for k, v in self._buffers.items()}
        for ch in self._children:
            out.update(ch.buffers())
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Copy values into matching params/buffers in place (shape-checked)."""
        for full, tensor in self.params().items():
            if full in arrays:
                src = arrays[full]
                if src.shape != tensor.data.shape:
                    raise ValueError(f"shape mismatch loading {full}: {src.shape} vs {tensor.data.shape}")
                tensor.data[...] = src.astype(tensor.data.dtype)
        for full, buf in self.buffers().items():
            if full in arrays:
                src = arrays[full]
                if src.shape != buf.shape:
                    raise ValueError(f"shape mismatch loading {full}: {src.shape} vs {buf.shape}")
                buf[...] = src.astype(buf.dtype)


class Conv2d(Layer):
    def __init__(self, name: str, c_in: int, c_out: int, k: int, stride: int = 1,
                 padding: int = 0, bias: bool = True, seed: int = 0,
                 dtype=np.float32, zero_init: bool = False):
        super().__init__(name)
        self.stride = stride
        self.padding = padding
        if zero_init:
            w = np.zeros((c_out, c_in, k, k), dtype=dtype)
        else:
            w = he_normal((c_out, c_in, k, k), c_in * k * k, seed, f"{name}.weight", dtype)
        self.weight = self.register_param("weight", w)
        self.bias: Optional[Tensor] = None
        if bias:
            self.bias = self.register_param("bias", np.zeros(c_out, dtype=dtype))

    def forward(self, x: Tensor, method: str = "auto") -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding, method)


class BatchNorm2d(Layer):
    def __init__(self, name: str, channels: int, momentum: float = 0.1,
                 eps: float = 1e-5, dtype=np.float32):
        super().__init__(name)
        self.momentum = momentum
        self.eps = eps
        self.gamma = self.register_param("gamma", np.ones(channels, dtype=dtype))
        self.beta = self.register_param("beta", np.zeros(channels, dtype=dtype))
        self.running_mean = self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.running_var = self.register_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x: Tensor, mode: str) -> Tensor:
        return ops.batch_norm2d(x, self.gamma, self.beta, self.running_mean,
                                self.running_var, mode, self.momentum, self.eps)


class Linear(Layer):
    def __init__(self, name: str, d_in: int, d_out: int, bias: bool = True,
                 seed: int = 0, dtype=np.float32, zero_init: bool = False):
        super().__init__(name)
        if zero_init:
            w = np.zeros((d_out, d_in), dtype=dtype)
        else:
            w = he_normal((d_out, d_in), d_in, seed, f"{name}.weight", dtype)
        self.weight = self.register_param("weight", w)
        self.bias: Optional[Tensor] = None
        if bias:
            self.bias = self.register_param("bias", np.zeros(d_out, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class Dropout(Layer):
    """Dropout whose mask is a pure function of ``(seed, layer name, step)``.

    Stateless masks make interrupted-and-resumed training bit-identical to an
    uninterrupted run: there is no generator state to carry across restarts.
    """

    def __init__(self, name: str, rate: float, seed: int = 0):
        super().__init__(name)
        self.rate = rate
        self.seed = seed
        self._id = name_hash(name)

    def forward(self, x: Tensor, mode: str, step: int = 0) -> Tensor:
        if mode == "eval" or self.rate == 0.0:
            return x
        rng = np.random.default_rng([self.seed, DROPOUT_DOMAIN, self._id, step])
        return ops.dropout(x, self.rate, mode, rng)
