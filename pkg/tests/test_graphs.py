import numpy as np
import pytest
from hypothesis import given, settings

from conftest import dyad, k3, random_graph, small_graphs
from netgames.errors import InvalidParameter, IsolatedNodeError
from netgames.graphs import (
    PayoffGraph,
    ba_seed_size,
    ball,
    extract_nested_subgraphs,
    gen_barabasi_albert,
    gen_erdos_renyi,
    lambda_weight,
    local_centrality,
    neighborhood,
)


def test_from_edges_symmetrizes_and_sorts():
    g = PayoffGraph.from_edges(4, [(2, 0), (0, 1), (3, 2)])
    assert g.neighbors(0).tolist() == [1, 2]
    assert g.neighbors(2).tolist() == [0, 3]
    assert g.edge_list().tolist() == [[0, 1], [0, 2], [2, 3]]
    assert g.num_edges == 3


@pytest.mark.parametrize("edges", [[(0, 0)], [(0, 1), (1, 0)], [(0, 5)]])
def test_from_edges_rejects_bad_input(edges):
    with pytest.raises(InvalidParameter):
        PayoffGraph.from_edges(3, edges)


def test_lenient_mode_merges_duplicates():
    g = PayoffGraph.from_edges(3, [(0, 1), (1, 0), (2, 2)], strict=False)
    assert g.num_edges == 1


def test_neighborhoods_on_k3():
    assert neighborhood(k3(), 0, 1) == {1, 2}
    path = PayoffGraph.from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4)])
    assert neighborhood(path, 0, 2) == {1, 2}
    assert ball(path, 2, 1).tolist() == [1, 2, 3]
    with pytest.raises(InvalidParameter):
        neighborhood(path, 9)


def test_centrality_hand_values():
    g = k3()
    assert local_centrality(g, 0, 1) == pytest.approx(0.5, abs=0)
    assert local_centrality(g, 0, 0) == pytest.approx(1 / 3, abs=1e-15)
    d = dyad()
    assert local_centrality(d, 0, 1) == 0.0
    assert local_centrality(d, 0, 0) == 0.5
    iso = PayoffGraph.from_edges(3, [(0, 1)])
    with pytest.raises(IsolatedNodeError):
        local_centrality(iso, 2, 2)


def test_lambda_weight():
    assert lambda_weight(0.5, 0.5) == pytest.approx(4 / 3)
    assert np.allclose(lambda_weight(np.array([0.0, 1 / 3]), 0.5), [1.0, 1.2])


@settings(max_examples=60, deadline=None)
@given(small_graphs())
def test_cached_centrality_matches_scalar_definition(g):
    cc = g.centrality
    for i in range(g.n):
        if g.degrees[i] == 0:
            assert cc.c_diag[i] == 0
            continue
        assert cc.c_diag[i] == pytest.approx(local_centrality(g, i, i), rel=1e-13)
        for p in range(g.indptr[i], g.indptr[i + 1]):
            j = int(g.indices[p])
            assert cc.c_edge[p] == pytest.approx(local_centrality(g, i, j), abs=1e-15)
            assert 0.0 <= cc.c_edge[p] <= 1.0


@settings(max_examples=40, deadline=None)
@given(small_graphs())
def test_row_normalized_rows_sum_to_one(g):
    s = np.asarray(g.row_normalized.sum(axis=1)).ravel()
    assert np.allclose(s, (g.degrees > 0).astype(float))
    A = g.adjacency_matrix.toarray()
    assert np.array_equal(A, A.T) and np.all(np.diag(A) == 0)


def test_er_generator_is_seeded_and_simple():
    a = gen_erdos_renyi(300, 2.0, np.random.default_rng(3))
    b = gen_erdos_renyi(300, 2.0, np.random.default_rng(3))
    assert np.array_equal(a.indices, b.indices)
    e = a.edge_list()
    assert np.all(e[:, 0] < e[:, 1])
    with pytest.raises(InvalidParameter):
        gen_erdos_renyi(10, 0.0, np.random.default_rng(0))


def test_er_mean_degree():
    d = [gen_erdos_renyi(2000, 3.0, np.random.default_rng(s)).average_degree for s in range(10)]
    assert abs(np.mean(d) - 3.0 * 1999 / 2000) < 0.1


def test_ba_generator_degrees():
    g = gen_barabasi_albert(500, 2, rng=np.random.default_rng(1))
    seed = ba_seed_size(500)
    assert seed == 112
    # every grown node brings exactly m edges
    assert np.all(g.degrees[seed:] >= 2)
    assert g.num_edges - gen_barabasi_albert(500, 2, rng=np.random.default_rng(1)).num_edges == 0
    with pytest.raises(InvalidParameter):
        gen_barabasi_albert(50, 2)


def test_nested_subgraphs_grow():
    g = random_graph(5, n=400, kind="er")
    subs = extract_nested_subgraphs(g, 0, 1)
    sizes = [s.n for s, _ in subs]
    assert sizes == sorted(sizes)
    A_ids, C_ids = subs[0][1], subs[2][1]
    assert set(A_ids) <= set(C_ids)
    sub, ids = subs[1]
    for i, j in sub.edge_list():
        assert g.has_edge(int(ids[i]), int(ids[j]))
