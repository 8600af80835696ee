"""Segmentation-node detection and pairing.

Nodes sitting near a convex obstacle corner carry a disproportionate share of
shortest paths. A two-centre 1-D K-means over the occurrence counts isolates
them; adjacent ones are paired to seed the bisectors used for partitioning.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import DegenerateProfile


@dataclass(frozen=True)
class Clustering:
    centers: tuple[float, float]
    assignment: np.ndarray  # 1 or 2 per node
    high_cluster: int
    iterations: int

    @property
    def high_members(self) -> np.ndarray:
        return np.nonzero(self.assignment == self.high_cluster)[0]


@dataclass(frozen=True, order=True)
class SegPair:
    a: int
    b: int

    def __post_init__(self):
        if self.a == self.b:
            raise ValueError("a segmentation pair needs two distinct nodes")

    @property
    def nodes(self) -> tuple[int, int]:
        return (self.a, self.b)


def _assign(ts: np.ndarray, mu1: float, mu2: float) -> np.ndarray:
    # ties go to cluster 1
    return np.where(np.abs(ts - mu1) <= np.abs(ts - mu2), 1, 2)


def kmeans_two(ts, init: tuple[float, float] | None = None, rng: np.random.Generator | None = None) -> Clustering:
    """Lloyd iteration with two centres until they stop moving.

    Centres start at (min, max) of the counts. Pass ``rng`` to start from the
    counts of two randomly drawn nodes instead, or ``init`` to set them.
    """
    ts = np.asarray(ts, dtype=float)
    if len(ts) < 2 or ts.min() == ts.max():
        raise DegenerateProfile("degenerate occurrence profile")
    if init is not None:
        mu1, mu2 = map(float, init)
    elif rng is not None:
        distinct = np.unique(ts)
        mu1, mu2 = sorted(rng.choice(distinct, size=2, replace=False))
    else:
        mu1, mu2 = float(ts.min()), float(ts.max())
    it = 0
    while True:
        it += 1
        labels = _assign(ts, mu1, mu2)
        new1 = ts[labels == 1].mean() if (labels == 1).any() else mu1
        new2 = ts[labels == 2].mean() if (labels == 2).any() else mu2
        if new1 == mu1 and new2 == mu2:
            break
        mu1, mu2 = float(new1), float(new2)
    high = 1 if mu1 >= mu2 else 2
    if not (labels == high).any():
        raise DegenerateProfile("degenerate occurrence profile")
    return Clustering((mu1, mu2), labels, high, it)


def select_segmentation_nodes(clustering: Clustering) -> list[int]:
    return [int(i) for i in clustering.high_members]


def candidate_pairs(seg: Iterable[int], network) -> list[SegPair]:
    seg = sorted(set(int(s) for s in seg))
    return [
        SegPair(a, b)
        for k, a in enumerate(seg)
        for b in seg[k + 1:]
        if network.adjacent(a, b)
    ]


def remove_redundant(pairs: list[SegPair]) -> tuple[list[SegPair], list[SegPair]]:
    """Drop every pair whose two nodes each also sit in some other pair.

    Flags are computed on the full candidate list before anything is removed.
    Returns (kept, removed).
    """
    degree = Counter(v for p in pairs for v in p.nodes)
    kept, removed = [], []
    for p in pairs:
        (removed if degree[p.a] >= 2 and degree[p.b] >= 2 else kept).append(p)
    return kept, removed


def form_pairs(seg: Iterable[int], network) -> list[SegPair]:
    """Adjacent segmentation nodes, minus redundant overlapping pairs."""
    kept, _ = remove_redundant(candidate_pairs(seg, network))
    return kept
