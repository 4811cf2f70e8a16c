"""Differentiable operations over :class:`~spatialgnn.tensor.Tensor`.

Every op validates its contract, computes the forward value with numpy, and
(when a tape is active and some input requires grad) records a closure that
maps the output gradient to per-input gradients. Hand-derived backward rules
are pinned against central finite differences in the test suite.

Convolution ships two interchangeable methods behind one contract:
``"im2col"`` (vectorized, the production default) and ``"direct"`` (literal
nested loops, kept as an auditable reference). Both share one backward.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .errors import NumericError, ShapeError
from .tensor import Tensor, active_tape, debug_checks_enabled

__all__ = [
    "conv2d", "batch_norm2d", "relu", "sigmoid", "dropout", "max_pool2d",
    "avg_pool_spatial", "linear", "concat_channels", "add", "scale",
    "sum_list", "reduce_sum", "reshape", "gather_rows", "segment_sum",
    "segment_mean",
]

_SUPPORTED_KERNELS = (1, 3)


def _tape_if_needed(*tensors: Tensor):
    tape = active_tape()
    if tape is None:
        return None
    if any(t.requires_grad for t in tensors):
        return tape
    return None


def _finish(out: Tensor) -> Tensor:
    if debug_checks_enabled() and not np.all(np.isfinite(out.data)):
        raise NumericError("non-finite values in op output")
    return out


def _require_rank(t: Tensor, rank: int, what: str) -> None:
    if t.ndim != rank:
        raise ShapeError(f"{what} must be rank {rank}, got shape {t.shape}")


# ---------------------------------------------------------------------------
# convolution


def _conv_out_dims(h: int, w: int, k: int, stride: int, padding: int) -> tuple[int, int]:
    oh = (h + 2 * padding - k) // stride + 1
    ow = (w + 2 * padding - k) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"conv2d output would be empty: input {h}x{w}, k={k}, stride={stride}, padding={padding}"
        )
    return oh, ow


def _im2col(x: np.ndarray, k: int, stride: int, padding: int, oh: int, ow: int) -> np.ndarray:
    n, c = x.shape[0], x.shape[1]
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride, :, :]
    # [n, c, oh, ow, k, k] -> [n*oh*ow, c*k*k]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * oh * ow, c * k * k)


def _conv_forward_direct(x: np.ndarray, w: np.ndarray, stride: int, padding: int,
                         oh: int, ow: int) -> np.ndarray:
    # Literal definition; only sensible on tiny shapes.
    n, c_in = x.shape[0], x.shape[1]
    c_out, k = w.shape[0], w.shape[2]
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((n, c_out, oh, ow), dtype=x.dtype)
    for b in range(n):
        for co in range(c_out):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ci in range(c_in):
                        for ki in range(k):
                            for kj in range(k):
                                acc += x[b, ci, i * stride + ki, j * stride + kj] * w[co, ci, ki, kj]
                    out[b, co, i, j] = acc
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1,
           padding: int = 0, method: str = "auto") -> Tensor:
    """2-D cross-correlation, ``[n,c_in,h,w] -> [n,c_out,oh,ow]``.

    Supported kernels are 1x1 and 3x3 (square weights ``[c_out,c_in,k,k]``).
    ``method`` picks the forward implementation; gradients are identical.
    """
    _require_rank(x, 4, "conv2d input")
    _require_rank(weight, 4, "conv2d weight")
    c_out, c_in, k, k2 = weight.shape
    if k != k2 or k not in _SUPPORTED_KERNELS:
        raise ShapeError(f"conv2d supports square kernels in {_SUPPORTED_KERNELS}, got {k}x{k2}")
    if x.shape[1] != c_in:
        raise ShapeError(f"conv2d channel mismatch: input has {x.shape[1]}, weight expects {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv2d bias must be [{c_out}], got {bias.shape}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d needs stride >= 1 and padding >= 0, got {stride}, {padding}")
    if method not in ("auto", "im2col", "direct"):
        raise ValueError(f"unknown conv2d method {method!r}")
    if x.dtype != weight.dtype:
        raise ShapeError(f"conv2d dtype mismatch: input {x.dtype} vs weight {weight.dtype}")

    n, _, h, w_in = x.shape
    oh, ow = _conv_out_dims(h, w_in, k, stride, padding)
    w_mat = weight.data.reshape(c_out, c_in * k * k)

    cols = None
    if method == "direct":
        out_data = _conv_forward_direct(x.data, weight.data, stride, padding, oh, ow)
    else:
        cols = _im2col(x.data, k, stride, padding, oh, ow)
        out_data = (cols @ w_mat.T).reshape(n, oh, ow, c_out).transpose(0, 3, 1, 2)
        out_data = np.ascontiguousarray(out_data)
    if bias is not None:
        out_data = out_data + bias.data[None, :, None, None]
    out = Tensor(out_data)

    tape = _tape_if_needed(x, weight, *( [bias] if bias is not None else [] ))
    if tape is not None:
        saved_cols = cols  # direct path recomputes lazily in backward
        x_data, pad, strd = x.data, padding, stride

        def backward_rule(g: np.ndarray):
            nonlocal saved_cols
            if saved_cols is None:
                saved_cols = _im2col(x_data, k, strd, pad, oh, ow)
            g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * oh * ow, c_out)
            gw = (g2.T @ saved_cols).reshape(c_out, c_in, k, k)
            gcols = (g2 @ w_mat).reshape(n, oh, ow, c_in, k, k)
            gx_pad = np.zeros(
                (n, c_in, h + 2 * pad, w_in + 2 * pad), dtype=x_data.dtype
            )
            for ki in range(k):
                for kj in range(k):
                    gx_pad[:, :, ki:ki + strd * oh:strd, kj:kj + strd * ow:strd] += \
                        gcols[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
            gx = gx_pad[:, :, pad:pad + h, pad:pad + w_in] if pad else gx_pad
            gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
            if bias is not None:
                return (gx, gw, gb)
            return (gx, gw)

        inputs = (x, weight, bias) if bias is not None else (x, weight)
        tape.record(out, inputs, backward_rule)
    return _finish(out)


# ---------------------------------------------------------------------------
# normalization / activations / regularization


def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                 running_var: np.ndarray, mode: str, momentum: float = 0.1,
                 eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over ``(n, h, w)``.

    Train mode normalizes with biased batch statistics and updates the running
    buffers in place with ``running = (1-momentum)*running + momentum*batch``
    (unbiased variance for the running estimate). Eval mode normalizes with
    the running buffers and treats them as constants.
    """
    _require_rank(x, 4, "batch_norm2d input")
    c = x.shape[1]
    for t, nm in ((gamma, "gamma"), (beta, "beta")):
        if t.shape != (c,):
            raise ShapeError(f"batch_norm2d {nm} must be [{c}], got {t.shape}")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if not 0.0 <= momentum <= 1.0:
        raise ValueError(f"momentum must be in [0, 1], got {momentum}")

    if mode == "train":
        m = x.shape[0] * x.shape[2] * x.shape[3]
        if m < 2:
            raise ShapeError("batch_norm2d train mode needs more than one value per channel")
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= (1.0 - momentum)
        running_mean += momentum * mean
        running_var *= (1.0 - momentum)
        running_var += momentum * (var * m / (m - 1))
    else:
        mean = running_mean
        var = running_var

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = Tensor(xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None])

    tape = _tape_if_needed(x, gamma, beta)
    if tape is not None:
        if mode == "train":
            m = x.shape[0] * x.shape[2] * x.shape[3]

            def backward_rule(g: np.ndarray):
                gbeta = g.sum(axis=(0, 2, 3))
                ggamma = (g * xhat).sum(axis=(0, 2, 3))
                gxhat = g * gamma.data[None, :, None, None]
                gx = (inv_std[None, :, None, None] / m) * (
                    m * gxhat
                    - gxhat.sum(axis=(0, 2, 3), keepdims=True)
                    - xhat * (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
                )
                return (gx, ggamma, gbeta)
        else:

            def backward_rule(g: np.ndarray):
                gbeta = g.sum(axis=(0, 2, 3))
                ggamma = (g * xhat).sum(axis=(0, 2, 3))
                gx = g * (gamma.data * inv_std)[None, :, None, None]
                return (gx, ggamma, gbeta)

        tape.record(out, (x, gamma, beta), backward_rule)
    return _finish(out)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0))
    tape = _tape_if_needed(x)
    if tape is not None:
        mask = x.data > 0

        def backward_rule(g: np.ndarray):
            return (g * mask,)

        tape.record(out, (x,), backward_rule)
    return _finish(out)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out_data = np.empty_like(d)
    pos = d >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    out_data[~pos] = ex / (1.0 + ex)
    out = Tensor(out_data)
    tape = _tape_if_needed(x)
    if tape is not None:

        def backward_rule(g: np.ndarray):
            return (g * out_data * (1.0 - out_data),)

        tape.record(out, (x,), backward_rule)
    return _finish(out)


def dropout(x: Tensor, rate: float, mode: str, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: train mode zeroes with probability ``rate`` and
    rescales survivors by ``1/(1-rate)``; eval mode is the identity."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype)
    factor = keep / (1.0 - rate)
    out = Tensor(x.data * factor)
    tape = _tape_if_needed(x)
    if tape is not None:

        def backward_rule(g: np.ndarray):
            return (g * factor,)

        tape.record(out, (x,), backward_rule)
    return _finish(out)


# ---------------------------------------------------------------------------
# pooling


def max_pool2d(x: Tensor, k: int = 2, stride: int = 2) -> Tensor:
    """Max pooling with floor output dims; gradient flows to the first
    maximum in each window (numpy argmax order), which keeps ties deterministic."""
    _require_rank(x, 4, "max_pool2d input")
    n, c, h, w = x.shape
    if k < 1 or stride < 1:
        raise ShapeError(f"max_pool2d needs k >= 1 and stride >= 1, got {k}, {stride}")
    if k > h or k > w:
        raise ShapeError(f"max_pool2d window {k}x{k} larger than input {h}x{w}")
    oh = (h - k) // stride + 1
    ow = (w - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x.data, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride, :, :].reshape(n, c, oh, ow, k * k)
    am = win.argmax(axis=-1)
    out = Tensor(np.take_along_axis(win, am[..., None], axis=-1)[..., 0])

    tape = _tape_if_needed(x)
    if tape is not None:

        def backward_rule(g: np.ndarray):
            gx = np.zeros((n, c, h, w), dtype=x.dtype)
            rows = (np.arange(oh) * stride)[None, None, :, None] + am // k
            cols = (np.arange(ow) * stride)[None, None, None, :] + am % k
            bi = np.arange(n)[:, None, None, None]
            ci = np.arange(c)[None, :, None, None]
            np.add.at(gx, (bi, ci, rows, cols), g)
            return (gx,)

        tape.record(out, (x,), backward_rule)
    return _finish(out)


def avg_pool_spatial(x: Tensor) -> Tensor:
    """Mean over the full spatial extent: ``[n,c,h,w] -> [n,c]``."""
    _require_rank(x, 4, "avg_pool_spatial input")
    n, c, h, w = x.shape
    out = Tensor(x.data.mean(axis=(2, 3)))
    tape = _tape_if_needed(x)
    if tape is not None:
        inv = 1.0 / (h * w)

        def backward_rule(g: np.ndarray):
            return (np.broadcast_to((g * inv)[:, :, None, None], (n, c, h, w)).copy(),)

        tape.record(out, (x,), backward_rule)
    return _finish(out)


# ---------------------------------------------------------------------------
# dense / structural


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Row-wise affine map ``[n,d] @ [m,d]^T + [m] -> [n,m]``."""
    _require_rank(x, 2, "linear input")
    _require_rank(weight, 2, "linear weight")
    m, d = weight.shape
    if x.shape[1] != d:
        raise ShapeError(f"linear expects input dim {d}, got {x.shape[1]}")
    if bias is not None and bias.shape != (m,):
        raise ShapeError(f"linear bias must be [{m}], got {bias.shape}")
    out_data = x.data @ weight.data.T
    if bias is not None:
        out_data = out_data + bias.data[None, :]
    out = Tensor(out_data)
    tape = _tape_if_needed(x, weight, *( [bias] if bias is not None else [] ))
    if tape is not None:

        def backward_rule(g: np.ndarray):
            gx = g @ weight.data
            gw = g.T @ x.data
            if bias is not None:
                return (gx, gw, g.sum(axis=0))
            return (gx, gw)

        inputs = (x, weight, bias) if bias is not None else (x, weight)
        tape.record(out, inputs, backward_rule)
    return _finish(out)


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate rank-4 tensors along the channel axis."""
    if not tensors:
        raise ShapeError("concat_channels needs at least one tensor")
    first = tensors[0]
    _require_rank(first, 4, "concat_channels input")
    n, _, h, w = first.shape
    for t in tensors[1:]:
        if t.ndim != 4 or t.shape[0] != n or t.shape[2] != h or t.shape[3] != w:
            raise ShapeError(
                f"concat_channels mismatch: {t.shape} vs leading {first.shape}"
            )
    out = Tensor(np.concatenate([t.data for t in tensors], axis=1))
    tape = _tape_if_needed(*tensors)
    if tape is not None:
        spans = np.cumsum([0] + [t.shape[1] for t in tensors])

        def backward_rule(g: np.ndarray):
            return tuple(g[:, spans[i]:spans[i + 1]] for i in range(len(tensors)))

        tape.record(out, tuple(tensors), backward_rule)
    return _finish(out)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; shapes must match exactly (no broadcasting)."""
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)
    tape = _tape_if_needed(a, b)
    if tape is not None:

        def backward_rule(g: np.ndarray):
            return (g, g)

        tape.record(out, (a, b), backward_rule)
    return _finish(out)


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    out = Tensor(x.data * factor)
    tape = _tape_if_needed(x)
    if tape is not None:

        def backward_rule(g: np.ndarray):
            return (g * factor,)

        tape.record(out, (x,), backward_rule)
    return _finish(out)


def sum_list(tensors: Sequence[Tensor], shape: Optional[tuple] = None,
             dtype=np.float64) -> Tensor:
    """Sum a list of same-shape tensors; an empty list yields zeros of
    ``shape`` (the no-incoming-messages case)."""
    if not tensors:
        if shape is None:
            raise ShapeError("sum_list of an empty list needs an explicit shape")
        return Tensor(np.zeros(shape, dtype=dtype))
    acc = tensors[0].data.copy()
    for t in tensors[1:]:
        if t.shape != tensors[0].shape:
            raise ShapeError(f"sum_list shape mismatch: {t.shape} vs {tensors[0].shape}")
        acc += t.data
    out = Tensor(acc)
    tape = _tape_if_needed(*tensors)
    if tape is not None:

        def backward_rule(g: np.ndarray):
            return tuple(g for _ in tensors)

        tape.record(out, tuple(tensors), backward_rule)
    return _finish(out)


def reduce_sum(x: Tensor) -> Tensor:
    """Sum all entries to a scalar."""
    out = Tensor(np.asarray(x.data.sum()))
    tape = _tape_if_needed(x)
    if tape is not None:

        def backward_rule(g: np.ndarray):
            return (np.broadcast_to(g, x.shape).copy(),)

        tape.record(out, (x,), backward_rule)
    return _finish(out)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    """View with a new shape (same number of elements)."""
    out = Tensor(x.data.reshape(shape))
    tape = _tape_if_needed(x)
    if tape is not None:

        def backward_rule(g: np.ndarray):
            return (g.reshape(x.shape),)

        tape.record(out, (x,), backward_rule)
    return _finish(out)


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Select rows along axis 0 (``y[i] = x[index[i]]``); backward scatter-adds."""
    index = np.asarray(index, dtype=np.int64)
    if index.ndim != 1:
        raise ShapeError(f"gather_rows index must be rank 1, got {index.shape}")
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise ShapeError(f"gather_rows index out of range for {x.shape[0]} rows")
    out = Tensor(x.data[index])
    tape = _tape_if_needed(x)
    if tape is not None:

        def backward_rule(g: np.ndarray):
            gx = np.zeros_like(x.data)
            np.add.at(gx, index, g)
            return (gx,)

        tape.record(out, (x,), backward_rule)
    return _finish(out)


def segment_sum(x: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows into ``num_segments`` buckets; empty buckets stay zero."""
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    if segment_ids.ndim != 1 or segment_ids.shape[0] != x.shape[0]:
        raise ShapeError(
            f"segment_ids must be rank 1 of length {x.shape[0]}, got {segment_ids.shape}"
        )
    if segment_ids.size and (segment_ids.min() < 0 or segment_ids.max() >= num_segments):
        raise ShapeError(f"segment id out of range for {num_segments} segments")
    out_data = np.zeros((num_segments,) + x.shape[1:], dtype=x.dtype)
    np.add.at(out_data, segment_ids, x.data)
    out = Tensor(out_data)
    tape = _tape_if_needed(x)
    if tape is not None:

        def backward_rule(g: np.ndarray):
            return (g[segment_ids],)

        tape.record(out, (x,), backward_rule)
    return _finish(out)


def segment_mean(x: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Mean rows per bucket; empty buckets yield zeros."""
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    if segment_ids.ndim != 1 or segment_ids.shape[0] != x.shape[0]:
        raise ShapeError(
            f"segment_ids must be rank 1 of length {x.shape[0]}, got {segment_ids.shape}"
        )
    if segment_ids.size and (segment_ids.min() < 0 or segment_ids.max() >= num_segments):
        raise ShapeError(f"segment id out of range for {num_segments} segments")
    counts = np.bincount(segment_ids, minlength=num_segments).astype(x.dtype)
    safe = np.maximum(counts, 1.0)
    sums = np.zeros((num_segments,) + x.shape[1:], dtype=x.dtype)
    np.add.at(sums, segment_ids, x.data)
    extra = (1,) * (x.ndim - 1)
    out = Tensor(sums / safe.reshape((num_segments,) + extra))
    tape = _tape_if_needed(x)
    if tape is not None:
        inv = (1.0 / safe)[segment_ids].reshape((x.shape[0],) + extra)

        def backward_rule(g: np.ndarray):
            return (g[segment_ids] * inv,)

        tape.record(out, (x,), backward_rule)
    return _finish(out)
