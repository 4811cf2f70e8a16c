"""Adam with bias correction.

Moments live per parameter name so they can be checkpointed and restored
exactly. A NaN/Inf gradient aborts the step with the offending parameter
named - continuing would silently poison every moment buffer.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError
from .tensor import Tensor

__all__ = ["Adam"]


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 5.12e-5,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        """One update over every parameter that received a gradient."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                bad = int(np.size(g) - np.isfinite(g).sum())
                raise NumericError(
                    f"non-finite gradient for parameter '{name}' at step {self.t} "
                    f"({bad} of {np.size(g)} entries)"
                )
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Moment buffers under ``adam.m.<name>`` / ``adam.v.<name>`` keys."""
        out = {}
        for k in self.params:
            out[f"adam.m.{k}"] = self.m[k]
            out[f"adam.v.{k}"] = self.v[k]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], t: int) -> None:
        self.t = int(t)
        for k in self.params:
            mk, vk = f"adam.m.{k}", f"adam.v.{k}"
            if mk in arrays:
                self.m[k][...] = arrays[mk]
            if vk in arrays:
                self.v[k][...] = arrays[vk]
