"""Random node deployment and the line-of-sight communication graph."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import NotOneHopLink, UndeployableScenario
from .geometry import Scenario, blocked_many, free_space_mask

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RangingModel:
    """Distance estimation on one-hop links: ``exact`` or ``gaussian`` with std ``sigma``."""

    kind: str = "exact"
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in ("exact", "gaussian"):
            raise ValueError(f"unknown ranging model {self.kind!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")

    @classmethod
    def parse(cls, text: str) -> "RangingModel":
        """``exact`` or ``gauss:SIGMA``."""
        text = text.strip().lower()
        if text == "exact":
            return cls()
        if text.startswith(("gauss:", "gaussian:")):
            return cls("gaussian", float(text.split(":", 1)[1]))
        raise ValueError(f"cannot parse ranging model {text!r}")

    def __str__(self) -> str:
        return "exact" if self.kind == "exact" else f"gauss:{self.sigma:g}"


@dataclass(frozen=True)
class Node:
    id: int
    position: tuple[float, float]
    is_anchor: bool


@dataclass(frozen=True, eq=False)
class Network:
    """A deployed layout. Node ids are the 0-based row indices of ``positions``.

    ``edges`` lists the LoS links (i < j); ``nlos_pairs`` lists pairs within
    radio range whose straight segment is blocked.
    """

    scenario: Scenario
    positions: np.ndarray
    is_anchor: np.ndarray
    L: float
    edges: np.ndarray
    nlos_pairs: np.ndarray
    in_range_pairs: int
    ranging: RangingModel = RangingModel()
    noise: np.ndarray = field(default=None, repr=False)
    neighbors: tuple = field(init=False, repr=False)
    _edge_index: dict = field(init=False, repr=False)

    def __post_init__(self):
        n = len(self.positions)
        nbrs = [[] for _ in range(n)]
        index = {}
        for k, (i, j) in enumerate(self.edges):
            i, j = int(i), int(j)
            nbrs[i].append(j)
            nbrs[j].append(i)
            index[(i, j)] = k
        object.__setattr__(self, "neighbors", tuple(tuple(sorted(a)) for a in nbrs))
        object.__setattr__(self, "_edge_index", index)
        if self.noise is None:
            object.__setattr__(self, "noise", np.zeros(len(self.edges)))
        for arr in (self.positions, self.is_anchor, self.edges, self.nlos_pairs, self.noise):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def nodes(self) -> list[Node]:
        return [
            Node(i, (float(x), float(y)), bool(a))
            for i, ((x, y), a) in enumerate(zip(self.positions, self.is_anchor))
        ]

    @property
    def anchors(self) -> np.ndarray:
        return np.nonzero(self.is_anchor)[0]

    @property
    def unknowns(self) -> np.ndarray:
        return np.nonzero(~self.is_anchor)[0]

    def adjacent(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self._edge_index

    def adjacency_matrix(self) -> np.ndarray:
        A = np.zeros((self.n, self.n), dtype=bool)
        if len(self.edges):
            A[self.edges[:, 0], self.edges[:, 1]] = True
            A[self.edges[:, 1], self.edges[:, 0]] = True
        return A

    def distance(self, i: int, j: int) -> float:
        return measure_distance(self, i, j)

    @classmethod
    def build(
        cls,
        scenario: Scenario,
        positions,
        is_anchor,
        L: float,
        ranging: RangingModel = RangingModel(),
        rng: np.random.Generator | None = None,
    ) -> "Network":
        """Derive the LoS graph for fixed positions; ``rng`` draws per-link noise."""
        pos = np.array(positions, dtype=float).reshape(-1, 2)
        anchor = np.array(is_anchor, dtype=bool).reshape(-1)
        edges, nlos, n_in_range = _los_graph(scenario, pos, L)
        noise = np.zeros(len(edges))
        if ranging.kind == "gaussian" and ranging.sigma > 0:
            if rng is None:
                rng = np.random.default_rng(0)
            noise = rng.normal(0.0, ranging.sigma, len(edges))
        return cls(scenario, pos, anchor, float(L), edges, nlos, n_in_range, ranging, noise)


def _los_graph(scenario: Scenario, pos: np.ndarray, L: float):
    n = len(pos)
    iu, ju = np.triu_indices(n, 1)
    d = np.hypot(pos[iu, 0] - pos[ju, 0], pos[iu, 1] - pos[ju, 1])
    close = d <= L
    iu, ju = iu[close], ju[close]
    blocked = blocked_many(scenario, pos[iu], pos[ju])
    edges = np.stack([iu[~blocked], ju[~blocked]], axis=1).astype(np.int64)
    nlos = np.stack([iu[blocked], ju[blocked]], axis=1).astype(np.int64)
    return edges.reshape(-1, 2), nlos.reshape(-1, 2), int(close.sum())


def is_connected(n: int, edges: np.ndarray) -> bool:
    if n == 0:
        return False
    if n == 1:
        return True
    g = coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n))
    count, _ = connected_components(g, directed=False)
    return count == 1


def sample_free_points(scenario: Scenario, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform rejection sampling over the free space."""
    out = np.empty((0, 2))
    while len(out) < n:
        batch = rng.uniform((0.0, 0.0), (scenario.width, scenario.height), size=(2 * n, 2))
        out = np.vstack([out, batch[free_space_mask(scenario, batch)]])
    return out[:n]


def deploy(
    scenario: Scenario,
    n_unknown: int,
    n_anchor: int,
    L: float,
    seed: int,
    ranging: RangingModel = RangingModel(),
    max_attempts: int = 1000,
) -> Network:
    """Place nodes uniformly in free space until the LoS graph is connected.

    The whole layout is resampled on failure, which keeps the spatial
    distribution uniform. Identical arguments give identical networks.
    """
    n = n_unknown + n_anchor
    if n < 4:
        raise ValueError("need at least 4 nodes")
    if n_unknown < 0 or n_anchor < 0:
        raise ValueError("node counts must be non-negative")
    if not L > 0:
        raise ValueError("radio range must be positive")
    scenario.check_edges(L)
    rng = np.random.default_rng(seed)
    for attempt in range(max_attempts):
        pos = sample_free_points(scenario, n, rng)
        edges, nlos, n_in_range = _los_graph(scenario, pos, L)
        if not is_connected(n, edges):
            continue
        anchor = np.zeros(n, dtype=bool)
        anchor[rng.choice(n, size=n_anchor, replace=False)] = True
        noise = np.zeros(len(edges))
        if ranging.kind == "gaussian" and ranging.sigma > 0:
            noise = rng.normal(0.0, ranging.sigma, len(edges))
        if attempt:
            log.debug("deployment connected after %d resamples", attempt)
        return Network(scenario, pos, anchor, float(L), edges, nlos, n_in_range, ranging, noise)
    raise UndeployableScenario(
        f"undeployable scenario: no connected layout for {scenario.name} after {max_attempts} attempts"
    )


def measure_distance(network: Network, i: int, j: int) -> float:
    """Range estimate on a one-hop LoS link."""
    if i == j:
        return 0.0
    k = network._edge_index.get((min(i, j), max(i, j)))
    if k is None:
        raise NotOneHopLink(f"not a one-hop link: {i}-{j}")
    (x0, y0), (x1, y1) = network.positions[i], network.positions[j]
    d = float(np.hypot(x1 - x0, y1 - y0))
    if network.ranging.kind == "exact":
        return d
    return max(0.0, d + float(network.noise[k]))


def dump_nodes(network: Network, path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "x", "y", "is_anchor"])
        for i, ((x, y), a) in enumerate(zip(network.positions, network.is_anchor)):
            w.writerow([i, repr(float(x)), repr(float(y)), int(a)])


def load_nodes(
    path: Union[str, Path],
    scenario: Scenario,
    L: float,
    ranging: RangingModel = RangingModel(),
    seed: int = 0,
) -> Network:
    with open(path, newline="") as fh:
        rows = sorted(csv.DictReader(fh), key=lambda r: int(r["id"]))
    pos = [(float(r["x"]), float(r["y"])) for r in rows]
    anchor = [bool(int(r["is_anchor"])) for r in rows]
    return Network.build(scenario, pos, anchor, L, ranging, np.random.default_rng(seed))
