"""Central finite-difference verification of tape gradients.

``grad_check`` evaluates a closure twice to assert the forward pass is
deterministic, runs one taped backward, then perturbs every parameter entry
by +/- epsilon and compares. The per-parameter figure of merit is

    max|g_ad - g_fd| / (max|g_ad| + max|g_fd| + epsilon)

which stays well behaved when a gradient is legitimately tiny or zero.
Checks are only meaningful in float64; the function refuses float32 inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import AutodiffError, NumericError
from .tensor import Tape, Tensor

__all__ = ["GradCheckRow", "GradCheckReport", "grad_check"]


@dataclass
class GradCheckRow:
    name: str
    max_abs_ad: float
    max_abs_fd: float
    max_rel_err: float

    def format(self, tolerance: float) -> str:
        verdict = "ok" if self.max_rel_err < tolerance else "FAIL"
        return (f"{self.name:<48s} ad={self.max_abs_ad:12.5e}  "
                f"fd={self.max_abs_fd:12.5e}  rel={self.max_rel_err:9.3e}  {verdict}")


@dataclass
class GradCheckReport:
    epsilon: float
    rows: list[GradCheckRow] = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((r.max_rel_err for r in self.rows), default=0.0)

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_err < tolerance

    def format_lines(self, tolerance: float) -> list[str]:
        lines = [r.format(tolerance) for r in self.rows]
        lines.append(
            f"{'worst':<48s} rel={self.max_rel_err:9.3e}  "
            f"{'ok' if self.passed(tolerance) else 'FAIL'} (tolerance {tolerance:g})"
        )
        return lines


def _eval_scalar(forward_fn: Callable[[], Tensor]) -> float:
    out = forward_fn()
    if out.data.size != 1:
        raise AutodiffError(f"grad_check forward must return a scalar, got shape {out.shape}")
    val = float(out.data.reshape(()))
    if not np.isfinite(val):
        raise NumericError("grad_check forward produced a non-finite value")
    return val


def grad_check(forward_fn: Callable[[], Tensor], params: dict[str, Tensor],
               epsilon: float = 1e-5) -> GradCheckReport:
    """Compare tape gradients with central finite differences.

    ``forward_fn`` must close over ``params`` and be deterministic (fixed
    inputs, eval-mode dropout). An empty ``params`` map yields an empty report.
    """
    for name, p in params.items():
        if p.data.dtype != np.float64:
            raise ValueError(f"grad_check requires float64 parameters; {name} is {p.data.dtype}")

    base = _eval_scalar(forward_fn)
    again = _eval_scalar(forward_fn)
    if base != again:
        raise AutodiffError(
            f"non-deterministic forward detected: {base!r} != {again!r}"
        )

    if not params:
        return GradCheckReport(epsilon=epsilon)

    for p in params.values():
        p.zero_grad()
    with Tape() as tape:
        loss = forward_fn()
    tape.backward(loss)

    report = GradCheckReport(epsilon=epsilon)
    for name, p in params.items():
        g_ad = p.grad if p.grad is not None else np.zeros_like(p.data)
        g_fd = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        fd_flat = g_fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            plus = _eval_scalar(forward_fn)
            flat[i] = orig - epsilon
            minus = _eval_scalar(forward_fn)
            flat[i] = orig
            fd_flat[i] = (plus - minus) / (2.0 * epsilon)
        num = float(np.max(np.abs(g_ad - g_fd))) if flat.size else 0.0
        mad = float(np.max(np.abs(g_ad))) if flat.size else 0.0
        mfd = float(np.max(np.abs(g_fd))) if flat.size else 0.0
        report.rows.append(GradCheckRow(name, mad, mfd, num / (mad + mfd + epsilon)))
        p.zero_grad()
    return report
