import itertools

import networkx as nx
import numpy as np
import pytest

from wsnloc.deployment import deploy
from wsnloc.errors import DisconnectedGraph
from wsnloc.geometry import build_scenario
from wsnloc.pathgraph import UNREACHABLE, hop_matrix, hops_from_edges, occurrence_counts

from oracles import all_shortest_paths, floyd_warshall, random_connected_graph, ts_by_enumeration


def test_path_of_three():
    H = hops_from_edges(3, [(0, 1), (1, 2)])
    assert occurrence_counts(H).tolist() == [2, 3, 2]


def test_complete_k4_counts_only_endpoints():
    H = hops_from_edges(4, list(itertools.combinations(range(4), 2)))
    assert occurrence_counts(H).tolist() == [3, 3, 3, 3]


def test_hops_match_floyd_warshall():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(2, 21))
        edges = random_connected_graph(rng, n, float(rng.uniform(0.0, 0.3)))
        assert np.array_equal(hops_from_edges(n, edges), floyd_warshall(n, edges))


def test_membership_criterion_matches_enumeration():
    # i is on some shortest j-k path exactly when the hop sum is tight
    rng = np.random.default_rng(1)
    for _ in range(40):
        n = int(rng.integers(3, 13))
        edges = random_connected_graph(rng, n, float(rng.uniform(0.0, 0.4)))
        H = hops_from_edges(n, edges)
        for j, k in itertools.combinations(range(n), 2):
            union = set().union(*all_shortest_paths(n, edges, j, k))
            for i in range(n):
                assert (H[j, i] + H[i, k] == H[j, k]) == (i in union)


def test_occurrence_counts_match_enumeration_small():
    rng = np.random.default_rng(2)
    for _ in range(30):
        n = int(rng.integers(2, 15))
        edges = random_connected_graph(rng, n, 0.2)
        assert occurrence_counts(hops_from_edges(n, edges)).tolist() == ts_by_enumeration(n, edges)


def test_ts_lower_bound():
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = int(rng.integers(2, 20))
        ts = occurrence_counts(hops_from_edges(n, random_connected_graph(rng, n, 0.15)))
        assert (ts >= n - 1).all()
        assert (ts <= n * (n - 1) // 2).all()


def test_ts_permutation_equivariant():
    rng = np.random.default_rng(4)
    n = 18
    edges = random_connected_graph(rng, n, 0.1)
    perm = rng.permutation(n)
    moved = [(int(perm[a]), int(perm[b])) for a, b in edges]
    ts = occurrence_counts(hops_from_edges(n, edges))
    ts2 = occurrence_counts(hops_from_edges(n, moved))
    assert np.array_equal(ts2[perm], ts)


def test_edge_removal_never_shortens():
    rng = np.random.default_rng(5)
    for _ in range(30):
        n = 15
        edges = random_connected_graph(rng, n, 0.25)
        H = hops_from_edges(n, edges).astype(float)
        drop = int(rng.integers(len(edges)))
        H2 = hops_from_edges(n, edges[:drop] + edges[drop + 1:], allow_disconnected=True).astype(float)
        H2[H2 == UNREACHABLE] = np.inf
        assert (H2 >= H).all()


def test_disconnected_graph():
    with pytest.raises(DisconnectedGraph):
        hops_from_edges(4, [(0, 1), (2, 3)])
    H = hops_from_edges(4, [(0, 1), (2, 3)], allow_disconnected=True)
    assert H[0, 2] == UNREACHABLE
    with pytest.raises(DisconnectedGraph):
        occurrence_counts(H)


def test_induced_subgraph():
    # the 0-1-2 shortcut disappears when node 1 is left out
    edges = [(0, 1), (1, 2), (0, 3), (3, 4), (4, 2)]
    H = hops_from_edges(5, edges, nodes=[0, 2, 3, 4])
    assert H[0, 1] == 3


def test_hop_matrix_matches_networkx_on_deployment():
    net = deploy(build_scenario("c_shape"), 150, 10, 15, seed=2)
    g = nx.Graph()
    g.add_nodes_from(range(net.n))
    g.add_edges_from(map(tuple, net.edges))
    H = hop_matrix(net)
    ref = dict(nx.all_pairs_shortest_path_length(g))
    assert all(H[i, j] == ref[i][j] for i in range(net.n) for j in range(net.n))
