"""Graph container, batching round trips, serialization, dataset ordering."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spatialgnn import (DataError, Graph, GraphDataset, GraphError,
                        batch_merge, batch_split, graph_validate, load_graphs,
                        neighborhoods, save_graphs)


def make_graph(rng, n_nodes, n_edges, c=2, h=3, w=3, feat_dim=2, with_labels=True):
    edges = rng.integers(0, n_nodes, size=(2, n_edges)).astype(np.int64)
    return Graph(
        node_features=rng.normal(size=(n_nodes, c, h, w)).astype(np.float32),
        edge_index=edges,
        edge_features=rng.normal(size=(n_edges, feat_dim)).astype(np.float32),
        node_labels=(rng.integers(0, 3, size=n_nodes).astype(np.int64)
                     if with_labels else None),
        graph_label=int(rng.integers(0, 3)) if with_labels else None,
    )


def assert_graphs_equal(a: Graph, b: Graph):
    np.testing.assert_array_equal(a.node_features, b.node_features)
    np.testing.assert_array_equal(a.edge_index, b.edge_index)
    np.testing.assert_array_equal(a.edge_features, b.edge_features)
    if a.node_labels is None:
        assert b.node_labels is None
    else:
        np.testing.assert_array_equal(a.node_labels, b.node_labels)
    assert a.graph_label == b.graph_label


def test_validate_catches_bad_indices_and_shapes():
    rng = np.random.default_rng(0)
    g = make_graph(rng, 3, 4)
    graph_validate(g)  # sane graph passes

    bad = make_graph(rng, 3, 4)
    bad.edge_index = np.array([[0, 1], [2, 3]], dtype=np.int64)  # dst 3 out of range
    with pytest.raises(GraphError):
        graph_validate(bad)

    bad2 = make_graph(rng, 3, 4)
    bad2.edge_features = bad2.edge_features[:2]
    with pytest.raises(GraphError):
        graph_validate(bad2)

    with pytest.raises(GraphError):
        graph_validate(Graph(node_features=np.zeros((0, 1, 2, 2)),
                             edge_index=np.zeros((2, 0), dtype=np.int64),
                             edge_features=np.zeros((0, 1))))


def test_merge_offsets_are_prefix_sums():
    rng = np.random.default_rng(1)
    graphs = [make_graph(rng, 2, 1), make_graph(rng, 3, 2), make_graph(rng, 1, 1)]
    batch = batch_merge(graphs)
    np.testing.assert_array_equal(batch.node_offsets, [0, 2, 5, 6])
    np.testing.assert_array_equal(batch.graph_ids, [0, 0, 1, 1, 1, 2])
    # second graph's edges shifted by its node offset
    np.testing.assert_array_equal(batch.edge_index[:, 1:3],
                                  graphs[1].edge_index + 2)


def test_merge_split_round_trip_explicit():
    rng = np.random.default_rng(2)
    graphs = [make_graph(rng, 4, 6), make_graph(rng, 2, 3), make_graph(rng, 5, 1)]
    back = batch_split(batch_merge(graphs))
    assert len(back) == len(graphs)
    for a, b in zip(graphs, back):
        assert_graphs_equal(a, b)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 5), st.integers(0, 7)),
                min_size=1, max_size=5),
       st.integers(0, 2**31 - 1))
def test_merge_split_round_trip_property(sizes, seed):
    rng = np.random.default_rng(seed)
    graphs = [make_graph(rng, n, e, with_labels=bool(seed % 2)) for n, e in sizes]
    back = batch_split(batch_merge(graphs))
    for a, b in zip(graphs, back):
        assert_graphs_equal(a, b)


def test_merge_requires_matching_channel_shapes():
    rng = np.random.default_rng(3)
    a = make_graph(rng, 2, 1, c=2)
    b = make_graph(rng, 2, 1, c=3)
    with pytest.raises(GraphError):
        batch_merge([a, b])


def test_neighborhoods_lists_incoming_edges_in_order():
    g = Graph(node_features=np.zeros((3, 1, 2, 2), dtype=np.float32),
              edge_index=np.array([[0, 1, 0], [2, 2, 1]], dtype=np.int64),
              edge_features=np.zeros((3, 1), dtype=np.float32))
    nbrs = neighborhoods(g)
    assert nbrs[2] == [(0, 0), (1, 1)]
    assert nbrs[1] == [(0, 2)]
    assert nbrs[0] == []


def test_jsonl_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    graphs = [make_graph(rng, 3, 2), make_graph(rng, 2, 0, with_labels=False)]
    path = tmp_path / "graphs.jsonl"
    save_graphs(path, graphs)
    back = load_graphs(path)
    for a, b in zip(graphs, back):
        assert_graphs_equal(a, b)
    assert back[0].node_features.dtype == np.float32


def test_jsonl_rejects_malformed_records(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"schema_version": 1, "num_nodes": 2}\n')
    with pytest.raises(DataError):
        load_graphs(path)
    path.write_text("not json\n")
    with pytest.raises(DataError):
        load_graphs(path)


def test_dataset_epoch_order_is_seeded_and_epoch_dependent():
    rng = np.random.default_rng(5)
    graphs = [make_graph(rng, 1, 0) for _ in range(10)]
    ds_a = GraphDataset(graphs, seed=9)
    ds_b = GraphDataset(graphs, seed=9)
    np.testing.assert_array_equal(ds_a.epoch_order(3), ds_b.epoch_order(3))
    assert not np.array_equal(ds_a.epoch_order(1), ds_a.epoch_order(2))
    assert sorted(ds_a.epoch_order(1)) == list(range(10))


def test_dataset_iter_batches_covers_everything_once():
    rng = np.random.default_rng(6)
    graphs = [make_graph(rng, 2, 1) for _ in range(7)]
    ds = GraphDataset(graphs, seed=0)
    seen = []
    for batch, idx in ds.iter_batches(3, epoch=1, shuffle=True):
        assert batch.num_graphs == len(idx)
        seen.extend(idx.tolist())
    assert sorted(seen) == list(range(7))
