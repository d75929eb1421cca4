import math

import networkx as nx
import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from dynclust.consensus import max_stable_step
from dynclust.graph import GraphError, build_graph, components, is_connected, laplacian, neighbors, ring_edges

from .conftest import connected_graphs


def to_nx(g):
    h = nx.Graph()
    h.add_nodes_from(range(1, g.node_count + 1))
    h.add_edges_from(g.edges)
    return h


def test_neighbors_of_ring():
    g = build_graph(4, ring_edges(4), 1.0)
    assert neighbors(g, 1).members == {2, 4}
    assert neighbors(g, 3).degree == 2


@pytest.mark.parametrize("edges, message", [
    ([(1, 1)], "self-loop"),
    ([(1, 2), (2, 1)], "duplicate"),
    ([(1, 5)], "outside"),
    ([(0, 1)], "outside"),
])
def test_invalid_edges_rejected(edges, message):
    with pytest.raises(GraphError, match=message):
        build_graph(4, edges, 1.0)


@pytest.mark.parametrize("alpha", [0.0, -1.0, math.inf, math.nan])
def test_invalid_coupling_rejected(alpha):
    with pytest.raises(GraphError):
        build_graph(3, [(1, 2)], alpha)


def test_single_node():
    g = build_graph(1, [], 1.0)
    assert is_connected(g)
    assert neighbors(g, 1).degree == 0
    assert max_stable_step(g) == math.inf


def test_two_node_laplacian_and_bound():
    g = build_graph(2, [(1, 2)], 1.0)
    assert laplacian(g).tolist() == [[1.0, -1.0], [-1.0, 1.0]]
    assert max_stable_step(g) == pytest.approx(1.0)


def test_disconnected_components():
    g = build_graph(5, [(1, 2), (4, 5)], 1.0)
    assert components(g) == [[1, 2], [3], [4, 5]]
    assert not is_connected(g)


def test_complete_graph_bound():
    # lambda_max(K_n) = n * alpha
    n, a = 6, 0.5
    g = build_graph(n, [(i, j) for i in range(1, n + 1) for j in range(i + 1, n + 1)], a)
    assert max_stable_step(g) == pytest.approx(2 / (n * a))


@settings(max_examples=60, deadline=None)
@given(connected_graphs())
def test_laplacian_matches_networkx(g):
    want = g.alpha * nx.laplacian_matrix(to_nx(g), nodelist=range(1, g.node_count + 1)).toarray()
    np.testing.assert_allclose(laplacian(g), want)


@settings(max_examples=60, deadline=None)
@given(connected_graphs(min_nodes=2))
def test_stable_step_matches_scipy(g):
    lam = scipy.linalg.eigh(laplacian(g), eigvals_only=True)[-1]
    assert max_stable_step(g) == pytest.approx(2 / lam, rel=1e-10)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**32 - 1), st.floats(0.0, 0.6))
def test_components_match_networkx(n, seed, p):
    rng = np.random.default_rng(seed)
    edges = [(i, j) for i in range(1, n + 1) for j in range(i + 1, n + 1) if rng.random() < p]
    g = build_graph(n, edges, 1.0)
    want = sorted(sorted(c) for c in nx.connected_components(to_nx(g)))
    assert components(g) == want
    assert is_connected(g) == nx.is_connected(to_nx(g))


@settings(max_examples=60, deadline=None)
@given(connected_graphs())
def test_laplacian_properties(g):
    L = laplacian(g)
    np.testing.assert_allclose(L, L.T)
    np.testing.assert_allclose(L.sum(axis=1), 0.0, atol=1e-12)
    assert np.linalg.eigvalsh(L)[0] > -1e-9
    assert sum(g.degree(i) for i in range(1, g.node_count + 1)) == 2 * len(g.edges)
