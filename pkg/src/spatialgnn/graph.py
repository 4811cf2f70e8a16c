"""Graphs whose node features are spatial tensors, plus batching and storage.

A :class:`Graph` holds ``[N, C, H, W]`` node features, directed edges as a
``[2, E]`` index array (row 0 = source, row 1 = destination) and per-edge
feature vectors ``[E, F]``. Batching concatenates several graphs into one
disjoint union: node indices get shifted by prefix-sum offsets so edges never
cross graph boundaries, and ``batch_split`` undoes the merge exactly.

On disk a dataset is line-delimited JSON, one graph per line, with node
features as base64-encoded raw little-endian bytes (schema version 1):

    {"version": 1, "num_nodes": N, "feature_shape": [C, H, W],
     "dtype": "float32", "node_features": "<base64>",
     "edge_index": [[src...], [dst...]], "edge_features": [[...], ...],
     "node_labels": [...] | null, "graph_label": int | null}
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .errors import DataError, GraphError

__all__ = [
    "Graph", "GraphBatch", "graph_validate", "neighborhoods",
    "batch_merge", "batch_split", "save_graphs", "load_graphs", "GraphDataset",
]

SHUFFLE_DOMAIN = 3
SCHEMA_VERSION = 1


@dataclass
class Graph:
    node_features: np.ndarray          # [N, C, H, W]
    edge_index: np.ndarray             # [2, E] int64, row 0 = src, row 1 = dst
    edge_features: np.ndarray          # [E, F]
    node_labels: Optional[np.ndarray] = None   # [N] int64
    graph_label: Optional[int] = None

    @property
    def num_nodes(self) -> int:
        return self.node_features.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edge_index.shape[1]


def graph_validate(g: Graph) -> None:
    """Raise :class:`GraphError` unless the structural contract holds."""
    if g.node_features.ndim != 4:
        raise GraphError(f"node_features must be [N,C,H,W], got {g.node_features.shape}")
    n = g.node_features.shape[0]
    if n < 1:
        raise GraphError("a graph needs at least one node")
    if g.edge_index.ndim != 2 or g.edge_index.shape[0] != 2:
        raise GraphError(f"edge_index must be [2,E], got {g.edge_index.shape}")
    e = g.edge_index.shape[1]
    if e:
        if g.edge_index.min() < 0 or g.edge_index.max() >= n:
            raise GraphError(f"edge index out of range for {n} nodes")
    if g.edge_features.ndim != 2 or g.edge_features.shape[0] != e:
        raise GraphError(
            f"edge_features must be [E,F] with E={e}, got {g.edge_features.shape}"
        )
    if g.node_labels is not None and g.node_labels.shape != (n,):
        raise GraphError(f"node_labels must be [{n}], got {g.node_labels.shape}")


def neighborhoods(g: Graph) -> dict[int, list[tuple[int, int]]]:
    """Incoming neighborhoods: destination -> [(source, edge position), ...]
    in edge-index order. Nodes without incoming edges map to empty lists."""
    out: dict[int, list[tuple[int, int]]] = {j: [] for j in range(g.num_nodes)}
    src, dst = g.edge_index
    for pos in range(g.num_edges):
        out[int(dst[pos])].append((int(src[pos]), pos))
    return out


@dataclass
class GraphBatch:
    node_features: np.ndarray          # [sum N, C, H, W]
    edge_index: np.ndarray             # [2, sum E] with offset indices
    edge_features: np.ndarray          # [sum E, F]
    node_offsets: np.ndarray           # [G+1] prefix sums: graph g owns [off[g], off[g+1])
    graph_ids: np.ndarray              # [sum N] owning graph of each node
    node_labels: Optional[np.ndarray] = None
    graph_labels: Optional[np.ndarray] = None

    @property
    def num_graphs(self) -> int:
        return len(self.node_offsets) - 1

    @property
    def num_nodes(self) -> int:
        return self.node_features.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edge_index.shape[1]


def batch_merge(graphs: list[Graph]) -> GraphBatch:
    """Disjoint union of graphs with prefix-sum node offsets."""
    if not graphs:
        raise GraphError("batch_merge needs at least one graph")
    for g in graphs:
        graph_validate(g)
    base = graphs[0]
    for g in graphs[1:]:
        if g.node_features.shape[1:] != base.node_features.shape[1:]:
            raise GraphError(
                f"node feature shape mismatch: {g.node_features.shape[1:]} vs "
                f"{base.node_features.shape[1:]}"
            )
        if g.edge_features.shape[1] != base.edge_features.shape[1]:
            raise GraphError("edge feature width mismatch across graphs")

    counts = [g.num_nodes for g in graphs]
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    edge_index = np.concatenate(
        [g.edge_index + offsets[i] for i, g in enumerate(graphs)], axis=1
    ) if any(g.num_edges for g in graphs) else np.zeros((2, 0), dtype=np.int64)
    graph_ids = np.repeat(np.arange(len(graphs), dtype=np.int64), counts)

    node_labels = None
    if all(g.node_labels is not None for g in graphs):
        node_labels = np.concatenate([g.node_labels for g in graphs])
    graph_labels = None
    if all(g.graph_label is not None for g in graphs):
        graph_labels = np.asarray([g.graph_label for g in graphs], dtype=np.int64)

    return GraphBatch(
        node_features=np.concatenate([g.node_features for g in graphs], axis=0),
        edge_index=edge_index.astype(np.int64),
        edge_features=np.concatenate([g.edge_features for g in graphs], axis=0),
        node_offsets=offsets,
        graph_ids=graph_ids,
        node_labels=node_labels,
        graph_labels=graph_labels,
    )


def batch_split(batch: GraphBatch) -> list[Graph]:
    """Exact inverse of :func:`batch_merge`."""
    graphs = []
    src, dst = batch.edge_index
    for gi in range(batch.num_graphs):
        lo, hi = int(batch.node_offsets[gi]), int(batch.node_offsets[gi + 1])
        mask = (src >= lo) & (src < hi)
        if mask.any() and not ((dst[mask] >= lo) & (dst[mask] < hi)).all():
            raise GraphError("batch contains an edge crossing graph boundaries")
        graphs.append(Graph(
            node_features=batch.node_features[lo:hi].copy(),
            edge_index=batch.edge_index[:, mask] - lo,
            edge_features=batch.edge_features[mask].copy(),
            node_labels=None if batch.node_labels is None else batch.node_labels[lo:hi].copy(),
            graph_label=None if batch.graph_labels is None else int(batch.graph_labels[gi]),
        ))
    return graphs


# ---------------------------------------------------------------------------
# serialization


def _graph_to_record(g: Graph) -> dict:
    feats = np.ascontiguousarray(g.node_features)
    return {
        "version": SCHEMA_VERSION,
        "num_nodes": int(g.num_nodes),
        "feature_shape": [int(s) for s in feats.shape[1:]],
        "dtype": str(feats.dtype),
        "node_features": base64.b64encode(feats.tobytes()).decode("ascii"),
        "edge_index": [[int(v) for v in row] for row in g.edge_index],
        "edge_feature_dim": int(g.edge_features.shape[1]),
        "edge_features": [[float(v) for v in row] for row in g.edge_features],
        "node_labels": None if g.node_labels is None else [int(v) for v in g.node_labels],
        "graph_label": None if g.graph_label is None else int(g.graph_label),
    }


def _record_to_graph(rec: dict) -> Graph:
    try:
        if rec["version"] != SCHEMA_VERSION:
            raise DataError(f"unsupported graph schema version {rec['version']}")
        n = int(rec["num_nodes"])
        shape = tuple(int(s) for s in rec["feature_shape"])
        dtype = np.dtype(rec["dtype"])
        raw = base64.b64decode(rec["node_features"])
        feats = np.frombuffer(raw, dtype=dtype)
        expected = n * int(np.prod(shape))
        if feats.size != expected:
            raise DataError(f"node feature payload has {feats.size} values, expected {expected}")
        feats = feats.reshape((n,) + shape).copy()
        edge_index = np.asarray(rec["edge_index"], dtype=np.int64).reshape(2, -1)
        ef = rec["edge_features"]
        e = edge_index.shape[1]
        ef_dim = int(rec.get("edge_feature_dim", len(ef[0]) if ef else 0))
        edge_features = (np.asarray(ef, dtype=feats.dtype).reshape(e, ef_dim)
                         if ef else np.zeros((0, ef_dim), dtype=feats.dtype))
        labels = rec.get("node_labels")
        g = Graph(
            node_features=feats,
            edge_index=edge_index,
            edge_features=edge_features,
            node_labels=None if labels is None else np.asarray(labels, dtype=np.int64),
            graph_label=rec.get("graph_label"),
        )
        graph_validate(g)
        return g
    except DataError:
        raise
    except (KeyError, ValueError, TypeError, GraphError) as exc:
        raise DataError(f"malformed graph record: {exc}") from exc


def save_graphs(path, graphs: list[Graph]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for g in graphs:
            fh.write(json.dumps(_graph_to_record(g)) + "\n")


def load_graphs(path) -> list[Graph]:
    graphs = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
                graphs.append(_record_to_graph(rec))
    except OSError as exc:
        raise DataError(f"cannot read graph file {path}: {exc}") from exc
    return graphs


# ---------------------------------------------------------------------------
# dataset


class GraphDataset:
    """An in-memory list of graphs with a seeded, epoch-indexed shuffle.

    The iteration order for epoch ``e`` is a pure function of
    ``(seed, e)``, so two runs with the same seed walk identical batches and a
    resumed run continues exactly where the uninterrupted one would be.
    """

    def __init__(self, graphs: list[Graph], seed: int = 0):
        self.graphs = list(graphs)
        self.seed = seed

    def __len__(self) -> int:
        return len(self.graphs)

    def __getitem__(self, i: int) -> Graph:
        return self.graphs[i]

    def epoch_order(self, epoch: int) -> np.ndarray:
        rng = np.random.default_rng([self.seed, SHUFFLE_DOMAIN, epoch])
        return rng.permutation(len(self.graphs))

    def iter_batches(self, batch_size: int, epoch: int = 0,
                     shuffle: bool = True) -> Iterator[tuple[GraphBatch, np.ndarray]]:
        """Yield ``(batch, indices)`` pairs; indices say which graphs went in."""
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        order = self.epoch_order(epoch) if shuffle else np.arange(len(self.graphs))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            yield batch_merge([self.graphs[i] for i in idx]), idx
