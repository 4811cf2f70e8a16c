"""Axis-aligned boxes, IoU, hulls and bilinear crop-resize.

Boxes are (x1, y1, x2, y2) in pixel coordinates with x1 < x2 and y1 < y2;
degenerate boxes are rejected at construction. ``crop_resize`` clips the box
to the image, then samples the clipped region onto a square output grid with
half-pixel-centered bilinear interpolation (edge-clamped), so a crop whose
box is integer-aligned at the output size copies pixels exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError

__all__ = ["Box", "box_iou", "union_box", "clip_box", "crop_resize"]


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise DataError(
                f"degenerate box: ({self.x1}, {self.y1}, {self.x2}, {self.y2})"
            )

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


def box_iou(a: Box, b: Box) -> float:
    """Intersection over union; 0 when interiors are disjoint, 1 iff identical."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def union_box(a: Box, b: Box) -> Box:
    """Axis-aligned hull of two boxes."""
    return Box(min(a.x1, b.x1), min(a.y1, b.y1), max(a.x2, b.x2), max(a.y2, b.y2))


def clip_box(box: Box, width: float, height: float) -> Box:
    """Clip to ``[0, width] x [0, height]``; a clipped-away box is an error."""
    x1 = min(max(box.x1, 0.0), width)
    y1 = min(max(box.y1, 0.0), height)
    x2 = min(max(box.x2, 0.0), width)
    y2 = min(max(box.y2, 0.0), height)
    if x2 - x1 <= 0.0 or y2 - y1 <= 0.0:
        raise DataError(f"box {box.as_tuple()} has zero area after clipping to "
                        f"{width}x{height}")
    return Box(x1, y1, x2, y2)


def _axis_weights(start: float, extent: float, out: int, src_len: int) -> np.ndarray:
    """[out, src_len] bilinear sampling matrix for one axis (edge clamped)."""
    w = np.zeros((out, src_len))
    scale = extent / out
    for o in range(out):
        s = start + (o + 0.5) * scale - 0.5
        s = min(max(s, 0.0), src_len - 1.0)
        lo = int(np.floor(s))
        hi = min(lo + 1, src_len - 1)
        t = s - lo
        w[o, lo] += 1.0 - t
        w[o, hi] += t
    return w


def crop_resize(image: np.ndarray, box: Box, out_size: int) -> np.ndarray:
    """Crop ``box`` out of ``[C, H, W]`` and resize to ``[C, out_size, out_size]``."""
    if image.ndim != 3:
        raise ShapeError(f"image must be [C, H, W], got {image.shape}")
    if out_size < 1:
        raise ShapeError(f"out_size must be positive, got {out_size}")
    _, h, w = image.shape
    box = clip_box(box, float(w), float(h))
    wy = _axis_weights(box.y1, box.height, out_size, h)
    wx = _axis_weights(box.x1, box.width, out_size, w)
    # separable: rows then columns
    return np.einsum("oh,chw,pw->cop", wy, image.astype(np.float64), wx,
                     optimize=True).astype(image.dtype if image.dtype.kind == "f"
                                           else np.float64)
