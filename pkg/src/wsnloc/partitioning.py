"""Sequential bisector splits that turn segmentation pairs into sub-networks."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .pathgraph import UNREACHABLE, hops_from_edges
from .segmentation import SegPair

log = logging.getLogger(__name__)

MIN_SIDE = 12


@dataclass(frozen=True)
class SplitRecord:
    pair: SegPair
    parent: int
    child: int | None  # None when the pair did not split anything
    bisector: tuple[int, ...]
    status: str  # "split", "separated", "small-side", "degenerate"


@dataclass
class PartitionMap:
    label: np.ndarray  # area id per node, starting at 1
    history: list[SplitRecord] = field(default_factory=list)

    @property
    def w(self) -> int:
        return sum(1 for h in self.history if h.status == "split")

    @property
    def z(self) -> int:
        return len(np.unique(self.label))

    def areas(self) -> dict[int, np.ndarray]:
        return {int(s): np.nonzero(self.label == s)[0] for s in np.unique(self.label)}

    def disconnected(self, network) -> list[int]:
        """Area labels whose induced subgraph falls apart."""
        out = []
        for s, members in self.areas().items():
            H = hops_from_edges(network.n, network.edges, members, allow_disconnected=True)
            if (H == UNREACHABLE).any():
                out.append(s)
        return out

    def skipped(self, status: str) -> int:
        return sum(1 for h in self.history if h.status == status)

    def to_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node_id", "area_label"])
            for i, s in enumerate(self.label):
                w.writerow([i, int(s)])


def order_pairs(pairs: Sequence[SegPair], ts) -> list[SegPair]:
    """Strongest corners first: descending TS_a + TS_b, then the larger TS, then smallest ids."""
    ts = np.asarray(ts)
    return sorted(
        pairs,
        key=lambda p: (-(int(ts[p.a]) + int(ts[p.b])), -max(int(ts[p.a]), int(ts[p.b])), min(p.nodes), max(p.nodes)),
    )


def orient(pair: SegPair, ts, network) -> tuple[int, int]:
    """Pick which node of a pair acts as ``a``, the side that wins bisector ties.

    The node with the higher TS leads, then the one with more neighbours, so
    the choice follows the topology rather than the numbering; only a full
    tie falls back to the smaller id.
    """
    def key(v):
        return (-int(ts[v]), -len(network.neighbors[v]), v)

    a, b = sorted(pair.nodes, key=key)
    return a, b


def partition(
    network,
    pairs: Sequence[SegPair],
    ts=None,
    min_side: int = MIN_SIDE,
    reverse: bool = False,
) -> PartitionMap:
    """Split areas along the hop-equidistant bisector of each pair in turn.

    Within the pair's current area, nodes closer (in hops over the area's
    induced subgraph) to ``a`` stay, nodes closer to ``b`` move to a new area,
    and equidistant nodes follow the side holding at least as many of their
    one-hop neighbours (ties stay with ``a``). When ``ts`` is given it sets the
    processing order and which pair node plays ``a`` (see ``orient``). Pairs already split apart by an
    earlier bisector are skipped, as are splits leaving a side with fewer than
    ``min_side`` nodes. ``reverse`` flips the processing order, which is
    only useful for checking how much the result depends on it.
    """
    label = np.ones(network.n, dtype=np.int64)
    pm = PartitionMap(label)
    if ts is not None:
        pairs = order_pairs(pairs, ts)
    if reverse:
        pairs = list(reversed(pairs))
    next_label = 2
    for pair in pairs:
        a, b = (pair.a, pair.b) if ts is None else orient(pair, ts, network)
        s = int(label[a])
        if label[b] != s:
            pm.history.append(SplitRecord(pair, s, None, (), "separated"))
            continue
        members = np.nonzero(label == s)[0]
        loc = {int(v): k for k, v in enumerate(members)}
        H = hops_from_edges(network.n, network.edges, members, allow_disconnected=True)
        ha, hb = H[loc[a]].astype(float), H[loc[b]].astype(float)
        ha[ha == UNREACHABLE] = np.inf
        hb[hb == UNREACHABLE] = np.inf
        closer_a = ha < hb
        closer_b = ha > hb
        equi = np.nonzero(~(closer_a | closer_b))[0]
        to_b = closer_b.copy()
        # bisector nodes are placed after everyone else, by neighbour majority
        for k in equi:
            n_a = n_b = 0
            for u in network.neighbors[int(members[k])]:
                ku = loc.get(u)
                if ku is not None:
                    n_a += bool(closer_a[ku])
                    n_b += bool(closer_b[ku])
            to_b[k] = n_a < n_b
        bisector = tuple(int(members[k]) for k in equi)
        nb = int(to_b.sum())
        na = len(members) - nb
        if na == 0 or nb == 0:
            log.info("pair %s: split would leave an empty side", pair)
            pm.history.append(SplitRecord(pair, s, None, bisector, "degenerate"))
            continue
        if min(na, nb) < min_side:
            log.info("pair %s: side with %d nodes below minimum %d", pair, min(na, nb), min_side)
            pm.history.append(SplitRecord(pair, s, None, bisector, "small-side"))
            continue
        label[members[to_b]] = next_label
        pm.history.append(SplitRecord(pair, s, next_label, bisector, "split"))
        next_label += 1
    broken = pm.disconnected(network) if pm.w else []
    if broken:
        log.warning("areas %s are not connected", broken)
    return pm


def relabel_dense(label: np.ndarray) -> np.ndarray:
    """Map labels to 1..z in order of first appearance."""
    out = np.empty_like(label)
    seen: dict[int, int] = {}
    for i, s in enumerate(label):
        out[i] = seen.setdefault(int(s), len(seen) + 1)
    return out
