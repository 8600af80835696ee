"""All-pairs hop distances and shortest-path occurrence counts."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import shortest_path

from .errors import DisconnectedGraph

UNREACHABLE = -1


def hops_from_edges(n: int, edges, nodes: Sequence[int] | None = None, allow_disconnected=False) -> np.ndarray:
    """BFS hop counts over the graph on ``n`` vertices (optionally induced on ``nodes``).

    Returned matrix is indexed by position in ``nodes`` when given. Unreachable
    entries are ``UNREACHABLE`` if ``allow_disconnected``, otherwise an error.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if nodes is not None:
        nodes = np.asarray(nodes, dtype=np.int64)
        local = np.full(n, -1, dtype=np.int64)
        local[nodes] = np.arange(len(nodes))
        a, b = local[edges[:, 0]], local[edges[:, 1]]
        keep = (a >= 0) & (b >= 0)
        edges = np.stack([a[keep], b[keep]], axis=1)
        n = len(nodes)
    g = coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n)).tocsr()
    dist = shortest_path(g, method="D", directed=False, unweighted=True)
    unreachable = ~np.isfinite(dist)
    if unreachable.any():
        if not allow_disconnected:
            raise DisconnectedGraph("graph is disconnected")
        dist[unreachable] = UNREACHABLE
    return dist.astype(np.int32)


def hop_matrix(network) -> np.ndarray:
    """n x n minimum hop counts over the network's LoS links."""
    return hops_from_edges(network.n, network.edges)


def occurrence_counts(hops: np.ndarray) -> np.ndarray:
    """TS_i: number of unordered pairs {j, k} having node i on some shortest path.

    Endpoints count as members of their own shortest paths. Node i lies on a
    minimum-hop j-k path exactly when hop(j, i) + hop(i, k) == hop(j, k).
    """
    D = np.asarray(hops)
    if (D < 0).any():
        raise DisconnectedGraph("occurrence counts need a connected graph")
    n = len(D)
    ts = np.empty(n, dtype=np.int64)
    for i in range(n):
        on_path = (D[:, i, None] + D[None, i, :]) == D
        # symmetric; the only diagonal hit is (i, i)
        ts[i] = (int(on_path.sum()) - 1) // 2
    return ts
