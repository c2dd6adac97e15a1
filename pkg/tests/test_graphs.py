import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dcgcl.graphs import (Graph, TUFormatError, batch_graphs, compute_rwse, dataset_stats,
                          generate_synthetic_dataset, parse_tu_dataset, triangle_count,
                          write_tu_dataset)

from conftest import path_graph, triangle


def write_files(root, name, a, indicator, labels, node_labels=None):
    root.mkdir(parents=True, exist_ok=True)
    (root / f"{name}_A.txt").write_text(a)
    (root / f"{name}_graph_indicator.txt").write_text("\n".join(map(str, indicator)) + "\n")
    (root / f"{name}_graph_labels.txt").write_text("\n".join(map(str, labels)) + "\n")
    if node_labels is not None:
        (root / f"{name}_node_labels.txt").write_text("\n".join(map(str, node_labels)) + "\n")


TOY_EDGES = "1, 2\n2, 1\n3, 4\n4, 3\n4, 5\n5, 4\n"


def test_parse_two_graph_example(tmp_path):
    write_files(tmp_path, "TOY", TOY_EDGES, [1, 1, 2, 2, 2], [1, -1])
    g0, g1 = parse_tu_dataset(tmp_path, "TOY")
    assert g0.num_nodes == 2 and len(g0.edges) == 2
    assert g1.num_nodes == 3 and sorted(map(tuple, g1.edges.tolist())) == [(0, 1), (1, 0), (1, 2), (2, 1)]
    assert (g0.label, g1.label) == (1, 0)
    assert g0.node_features.tolist() == [[1.0], [1.0]]


def test_parse_accepts_nested_directory_and_loose_whitespace(tmp_path):
    write_files(tmp_path / "TOY", "TOY", "1,2\n2 ,1\n3,  4\n4,3\n4,5\n5,4\n\n", [1, 1, 2, 2, 2], [0, 1])
    assert len(parse_tu_dataset(tmp_path, "TOY")) == 2


def test_node_labels_become_one_hot(tmp_path):
    write_files(tmp_path, "TOY", TOY_EDGES, [1, 1, 2, 2, 2], [0, 1], node_labels=[3, 5, 5, 3, 7])
    g0, g1 = parse_tu_dataset(tmp_path, "TOY")
    assert g0.node_features.tolist() == [[1, 0, 0], [0, 1, 0]]
    assert g1.node_features.tolist() == [[0, 1, 0], [1, 0, 0], [0, 0, 1]]


def test_self_loops_dropped(tmp_path):
    write_files(tmp_path, "TOY", TOY_EDGES + "3, 3\n", [1, 1, 2, 2, 2], [0, 1])
    g1 = parse_tu_dataset(tmp_path, "TOY")[1]
    assert not np.any(g1.edges[:, 0] == g1.edges[:, 1])


def test_missing_file_is_named(tmp_path):
    write_files(tmp_path, "TOY", TOY_EDGES, [1, 1, 2, 2, 2], [0, 1])
    (tmp_path / "TOY_graph_labels.txt").unlink()
    with pytest.raises(FileNotFoundError, match="TOY_graph_labels.txt"):
        parse_tu_dataset(tmp_path, "TOY")


def test_cross_graph_edge_reports_line(tmp_path):
    write_files(tmp_path, "TOY", "1, 2\n2, 1\n2, 3\n", [1, 1, 2, 2, 2], [0, 1])
    with pytest.raises(TUFormatError, match=r"TOY_A.txt:3"):
        parse_tu_dataset(tmp_path, "TOY")


def test_non_integer_token_reports_line(tmp_path):
    write_files(tmp_path, "TOY", "1, 2\n2, x\n", [1, 1, 2, 2, 2], [0, 1])
    with pytest.raises(TUFormatError, match=r"TOY_A.txt:2"):
        parse_tu_dataset(tmp_path, "TOY")


def test_asymmetric_edges_rejected(tmp_path):
    write_files(tmp_path, "TOY", "1, 2\n", [1, 1, 2, 2, 2], [0, 1])
    with pytest.raises(TUFormatError, match="asymmetric"):
        parse_tu_dataset(tmp_path, "TOY")


def test_round_trip_preserves_graphs(tmp_path):
    write_files(tmp_path / "in", "TOY", TOY_EDGES, [1, 1, 2, 2, 2], [4, 9], node_labels=[0, 1, 1, 2, 0])
    first = parse_tu_dataset(tmp_path / "in", "TOY")
    write_tu_dataset(first, tmp_path / "out", "TOY")
    second = parse_tu_dataset(tmp_path / "out", "TOY")
    assert len(first) == len(second)
    assert all(a.same_as(b) for a, b in zip(first, second))


def test_round_trip_of_synthetic_corpus(tmp_path):
    graphs = generate_synthetic_dataset(20, seed=2, num_nodes=(4, 10))
    write_tu_dataset(graphs, tmp_path, "SYN")
    back = parse_tu_dataset(tmp_path, "SYN")
    assert all(a.same_as(b) for a, b in zip(graphs, back))
    assert dataset_stats(back)["graphs"] == 20


def test_rwse_single_edge():
    g = path_graph(2)
    np.testing.assert_array_equal(compute_rwse(g, 3), [[0, 1, 0], [0, 1, 0]])


def test_rwse_triangle():
    np.testing.assert_allclose(compute_rwse(triangle(), 3), [[0, 0.5, 0.25]] * 3, atol=1e-15)


def test_rwse_isolated_node():
    g = Graph(1, np.zeros((0, 2)), np.ones((1, 1)))
    assert compute_rwse(g, 2).tolist() == [[0.0, 0.0]]


def test_rwse_matches_matrix_power_oracle(small_corpus):
    g = small_corpus[0]
    a = g.adjacency()
    t = a / np.maximum(a.sum(axis=1, keepdims=True), 1)
    expect = np.stack([np.diag(np.linalg.matrix_power(t, k)) for k in range(1, 9)], axis=1)
    np.testing.assert_allclose(compute_rwse(g, 8), expect, atol=1e-14)


def test_batch_offsets_and_membership():
    b = batch_graphs([path_graph(2), path_graph(3)])
    assert b.total_nodes == 5
    assert b.membership.tolist() == [0, 0, 1, 1, 1]
    assert [2, 3] in b.edges.tolist()


def test_single_graph_batch_is_identity():
    g = path_graph(4)
    b = batch_graphs([g])
    assert np.array_equal(b.edges, g.edges)
    assert b.membership.tolist() == [0, 0, 0, 0]


def test_batch_rejects_empty_and_mixed_dims():
    with pytest.raises(ValueError):
        batch_graphs([])
    with pytest.raises(ValueError, match="mixed"):
        batch_graphs([path_graph(2), path_graph(2, np.ones((2, 3)))])


def test_synthetic_is_deterministic_and_balanced():
    a = generate_synthetic_dataset(10, seed=7)
    b = generate_synthetic_dataset(10, seed=7)
    assert all(x.same_as(y) for x, y in zip(a, b))
    assert sorted(g.label for g in a).count(0) == 5


def test_communities_have_more_triangles_than_er():
    graphs = generate_synthetic_dataset(200, seed=11, num_nodes=20)
    tri = {0: [], 1: []}
    for g in graphs:
        tri[g.label].append(triangle_count(g))
    assert np.mean(tri[1]) > np.mean(tri[0])


def test_triangle_count_brute_force(small_corpus):
    for g in small_corpus[:4]:
        a = g.adjacency().astype(bool)
        n = g.num_nodes
        brute = sum(a[i, j] and a[j, k] and a[i, k]
                    for i in range(n) for j in range(i + 1, n) for k in range(j + 1, n))
        assert triangle_count(g) == brute


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 8), min_size=1, max_size=5), st.integers(0, 10_000))
def test_batch_then_split_recovers_graphs(sizes, seed):
    rng = np.random.default_rng(seed)
    graphs = []
    for n in sizes:
        upper = np.triu(rng.random((n, n)) < 0.4, k=1)
        i, j = np.nonzero(upper | upper.T)
        graphs.append(Graph(n, np.stack([i, j], axis=1), rng.normal(size=(n, 2)), 0))
    batch = batch_graphs(graphs)
    assert np.all(np.diff(batch.membership) >= 0)
    src, dst = batch.edges.T if batch.edges.size else (np.array([], int), np.array([], int))
    assert np.array_equal(batch.membership[src], batch.membership[dst])
    assert all(a.same_as(b) for a, b in zip(graphs, batch.split()))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 9), st.integers(0, 10_000))
def test_rwse_range_and_first_column(n, seed):
    rng = np.random.default_rng(seed)
    upper = np.triu(rng.random((n, n)) < 0.5, k=1)
    i, j = np.nonzero(upper | upper.T)
    pe = compute_rwse(Graph(n, np.stack([i, j], axis=1), np.ones((n, 1))), 8)
    assert np.all((pe >= 0) & (pe <= 1 + 1e-12))
    assert np.all(pe[:, 0] == 0)
