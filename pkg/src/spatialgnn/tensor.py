"""Dense tensors with reverse-mode automatic differentiation on an explicit tape.

The workhorse layout is rank-4 ``[n, c, h, w]`` (row-major), but rank-1/2
tensors appear as parameter vectors, pooled features and scalar losses.

Recording model: while a :class:`Tape` is active (``with tape:``), every
operation in :mod:`spatialgnn.ops` whose inputs require gradients appends one
record ``(output, inputs, backward_rule)``. Records are appended in execution
order, which is by construction a topological order of the computation graph,
so ``Tape.backward`` is a single reverse sweep that visits each record exactly
once. A tape can be consumed by ``backward`` only once; build a fresh tape per
training step.

The tape is deliberately a module-level singleton: the training loop is
single-threaded and any intra-op parallelism stays inside individual numpy
calls, so there is never more than one live tape.

Values are expected to stay finite; losses and the optimizer always check.
Per-op checking is too expensive to leave on in training, so it sits behind
:func:`set_debug_checks` for tests and debugging.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .errors import AutodiffError, NumericError, ShapeError

__all__ = ["Tensor", "Tape", "active_tape", "set_debug_checks", "debug_checks_enabled"]

_DEBUG_CHECKS = False


def set_debug_checks(enabled: bool) -> None:
    """Globally toggle per-op finiteness checks (slow; meant for tests)."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


def debug_checks_enabled() -> bool:
    return _DEBUG_CHECKS


class Tensor:
    """A numpy array plus gradient bookkeeping.

    ``requires_grad`` marks trainable parameters; tensors produced by taped ops
    inherit it so gradients can flow through intermediates. ``grad`` is either
    ``None`` or an ndarray of the same shape, accumulated (summed) across
    backward passes until explicitly cleared.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of size {self.data.size}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match value shape {self.data.shape}"
                + (f" for '{self.name}'" if self.name else "")
            )
        if self.grad is None:
            # copy: the incoming buffer may be reused by the caller
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad}{tag})"


class _TapeRecord:
    __slots__ = ("output", "inputs", "backward_rule")

    def __init__(self, output: Tensor, inputs: Sequence[Tensor], backward_rule: Callable):
        self.output = output
        self.inputs = tuple(inputs)
        self.backward_rule = backward_rule


_ACTIVE: Optional["Tape"] = None


def active_tape() -> Optional["Tape"]:
    """The currently recording tape, or None (inference / data prep)."""
    return _ACTIVE


class Tape:
    """Ordered record of differentiable operations for one backward sweep."""

    def __init__(self):
        self._records: list[_TapeRecord] = []
        self._output_ids: set[int] = set()
        self._consumed = False

    def __enter__(self) -> "Tape":
        global _ACTIVE
        if _ACTIVE is not None:
            raise AutodiffError("a tape is already active; tapes do not nest")
        _ACTIVE = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        global _ACTIVE
        _ACTIVE = None

    def __len__(self) -> int:
        return len(self._records)

    @property
    def consumed(self) -> bool:
        return self._consumed

    def record(self, output: Tensor, inputs: Sequence[Tensor], backward_rule: Callable) -> None:
        """Append one op. ``backward_rule(out_grad)`` must return one gradient
        array (or None) per input, in input order."""
        if self._consumed:
            raise AutodiffError("cannot record onto a consumed tape")
        output.requires_grad = True
        self._records.append(_TapeRecord(output, inputs, backward_rule))
        self._output_ids.add(id(output))

    def backward(self, loss: Tensor) -> None:
        """Reverse sweep from ``loss``, accumulating into ``Tensor.grad``.

        ``loss`` must be a scalar produced by an op recorded on this tape.
        The sweep walks the records once, newest first; records whose output
        never received a gradient are dead branches and are skipped.
        """
        if self._consumed:
            raise AutodiffError("tape already consumed by a previous backward()")
        if loss.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {loss.data.shape}")
        if id(loss) not in self._output_ids:
            raise AutodiffError("loss tensor was not produced on this tape (detached graph)")
        if not np.all(np.isfinite(loss.data)):
            raise NumericError(f"loss is not finite: {loss.data!r}")

        loss.accumulate_grad(np.ones_like(loss.data))
        for rec in reversed(self._records):
            out_grad = rec.output.grad
            if out_grad is None:
                continue
            grads = rec.backward_rule(out_grad)
            if len(grads) != len(rec.inputs):
                raise AutodiffError(
                    f"backward rule returned {len(grads)} gradient(s) for {len(rec.inputs)} input(s)"
                )
            for inp, g in zip(rec.inputs, grads):
                if g is None or not inp.requires_grad:
                    continue
                inp.accumulate_grad(np.asarray(g))
        self._consumed = True
