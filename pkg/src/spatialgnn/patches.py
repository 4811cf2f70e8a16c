"""Slice an image into a non-overlapping patch grid and wire it into a graph.

Patches are enumerated row-major (patch index = row * cols + col). Proximity
edges connect patches whose grid coordinates lie within ``tau`` under the
chosen metric; edges are directed and emitted both ways, never self-loops.
With tau = 1 the manhattan metric yields the 4-neighborhood and chebyshev the
8-neighborhood. Edge features carry the grid displacement (d_row, d_col) of
destination minus source.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .graph import Graph

__all__ = [
    "extract_patches", "build_grid_graph", "attach_positional_edge_features",
    "image_to_graph",
]


def extract_patches(image: np.ndarray, patch_h: int, patch_w: int,
                    pad_policy: str = "error"):
    """Tile ``[C, H, W]`` into ``([N, C, patch_h, patch_w], (rows, cols), coords)``.

    ``pad_policy="error"`` rejects images that do not divide evenly;
    ``"zero"`` zero-pads on the bottom/right edges instead. ``coords`` is an
    ``[N, 2]`` int array of (row, col) grid positions in patch order.
    """
    if image.ndim != 3:
        raise ShapeError(f"image must be [C, H, W], got {image.shape}")
    if patch_h < 1 or patch_w < 1:
        raise ShapeError(f"patch dims must be positive, got {patch_h}x{patch_w}")
    c, h, w = image.shape
    if pad_policy not in ("error", "zero"):
        raise ValueError(f"pad_policy must be 'error' or 'zero', got {pad_policy!r}")
    rem_h, rem_w = h % patch_h, w % patch_w
    if rem_h or rem_w:
        if pad_policy == "error":
            raise ShapeError(
                f"image {h}x{w} does not tile into {patch_h}x{patch_w} patches"
            )
        image = np.pad(image, ((0, 0),
                               (0, patch_h - rem_h if rem_h else 0),
                               (0, patch_w - rem_w if rem_w else 0)))
        h, w = image.shape[1:]
    rows, cols = h // patch_h, w // patch_w
    # [C, rows, ph, cols, pw] -> [rows, cols, C, ph, pw] -> [N, C, ph, pw]
    tiled = image.reshape(c, rows, patch_h, cols, patch_w)
    patches = np.ascontiguousarray(tiled.transpose(1, 3, 0, 2, 4)).reshape(
        rows * cols, c, patch_h, patch_w
    )
    rr, cc = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    coords = np.stack([rr.ravel(), cc.ravel()], axis=1).astype(np.int64)
    return patches, (rows, cols), coords


def build_grid_graph(coords: np.ndarray, metric: str = "manhattan",
                     tau: float = 1.0) -> np.ndarray:
    """Directed proximity edges over grid coordinates.

    Returns ``[2, E]`` with an edge i -> j whenever ``dist(i, j) <= tau`` and
    ``i != j``; both directions are present because the pairwise test is
    symmetric. Edge order is source-major and deterministic.
    """
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ShapeError(f"coords must be [N, 2], got {coords.shape}")
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    if metric not in ("manhattan", "chebyshev"):
        raise ValueError(f"metric must be 'manhattan' or 'chebyshev', got {metric!r}")
    diff = np.abs(coords[:, None, :] - coords[None, :, :])
    if metric == "manhattan":
        dist = diff.sum(axis=2)
    else:
        dist = diff.max(axis=2)
    mask = (dist <= tau) & ~np.eye(len(coords), dtype=bool)
    src, dst = np.nonzero(mask)
    return np.stack([src, dst]).astype(np.int64)


def attach_positional_edge_features(coords: np.ndarray,
                                    edge_index: np.ndarray) -> np.ndarray:
    """Per-edge displacement features ``coords[dst] - coords[src]`` as floats."""
    if edge_index.ndim != 2 or edge_index.shape[0] != 2:
        raise ShapeError(f"edge_index must be [2, E], got {edge_index.shape}")
    src, dst = edge_index
    return (coords[dst] - coords[src]).astype(np.float32)


def image_to_graph(image: np.ndarray, patch_h: int, patch_w: int,
                   metric: str = "manhattan", tau: float = 1.0,
                   pad_policy: str = "error",
                   node_labels: np.ndarray | None = None) -> Graph:
    """Full pipeline: tile the image, build the grid graph, attach features."""
    patches, _, coords = extract_patches(image, patch_h, patch_w, pad_policy)
    edge_index = build_grid_graph(coords, metric, tau)
    edge_features = attach_positional_edge_features(coords, edge_index)
    return Graph(node_features=patches.astype(np.float32, copy=False),
                 edge_index=edge_index, edge_features=edge_features,
                 node_labels=node_labels)
