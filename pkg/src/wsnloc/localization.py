"""Relative localization inside each sub-network and calibration to the global frame.

Every sub-network builds its own frame from a reference triangle of mutually
one-hop nodes, grows a set of known nodes outward from it, and is finally
mapped onto global coordinates with a least-squares affine fit over anchors.
"""

from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.optimize import least_squares
from scipy.sparse.linalg import spsolve

from .deployment import Network, measure_distance
from .errors import (
    InconsistentTrilateration,
    NoIntersection,
    NoReferenceTriple,
    UncalibratableSubnet,
)
from .pathgraph import hops_from_edges

log = logging.getLogger(__name__)

COLLINEAR_SLACK = 0.05  # fraction of L
TANGENT_TOL = 1e-9  # fraction of L
STRETCH_TOL = 0.2  # allowed scale error of a calibration map
MIRROR_SEPARATION = 4.0  # noise sigmas between a placement and a competing mirror
RESIDUAL_TOL = 1e-6  # fraction of L
VIOLATION_MARGIN = 1  # silent in-range knowns needed to rule out a Case-2 mirror
_TWO_PI = 2.0 * np.pi

REFERENCE = "reference"
UNRESOLVED = "unresolved"


@dataclass(frozen=True)
class ReferenceTriple:
    o: int
    x: int
    y: int
    d_ox: float
    d_oy: float
    d_xy: float

    @property
    def nodes(self) -> tuple[int, int, int]:
        return (self.o, self.x, self.y)


@dataclass
class RelativeFrame:
    subnet: int
    nodes: np.ndarray  # member ids, sorted
    coords: dict[int, np.ndarray] = field(default_factory=dict)
    case_tag: dict[int, str | int] = field(default_factory=dict)
    known_set: list[int] = field(default_factory=list)
    low_confidence: set[int] = field(default_factory=set)
    uncertain: set[int] = field(default_factory=set)  # placed from a guess, directly or through others
    refs: ReferenceTriple | None = None

    def resolved(self) -> list[int]:
        return list(self.known_set)

    def tag(self, node: int) -> str | int:
        return self.case_tag.get(node, UNRESOLVED)

    def exact(self, node: int) -> bool:
        return self.tag(node) in (REFERENCE, 1, 2) and node not in self.uncertain


@dataclass(frozen=True)
class FrameTransform:
    R1: float
    R2: float
    R3: float
    R4: float
    dx: float
    dy: float

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.R1, self.R2], [self.R3, self.R4]])

    @property
    def det(self) -> float:
        return self.R1 * self.R4 - self.R2 * self.R3

    def apply(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return pts @ self.matrix.T + np.array([self.dx, self.dy])

    @classmethod
    def identity(cls) -> "FrameTransform":
        return cls(1.0, 0.0, 0.0, 1.0, 0.0, 0.0)


@dataclass
class LocalizationResult:
    frames: list[tuple[RelativeFrame, FrameTransform | None]]
    global_estimate: np.ndarray  # (n, 2), NaN where unlocalized
    subnet: np.ndarray  # area label per node
    flags: list[str] = field(default_factory=list)

    def localized(self) -> np.ndarray:
        return ~np.isnan(self.global_estimate[:, 0])

    def case_tags(self) -> dict[int, str | int]:
        tags: dict[int, str | int] = {}
        for frame, _ in self.frames:
            tags.update(frame.case_tag)
        return tags

    def to_csv(self, path: Union[str, Path], network: Network) -> None:
        rel: dict[int, np.ndarray] = {}
        for frame, _ in self.frames:
            rel.update(frame.coords)
        tags = self.case_tags()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node_id", "subnet", "case_tag", "x_rel", "y_rel", "x_glob", "y_glob", "true_x", "true_y", "error_m"])
            for i in range(network.n):
                r = rel.get(i, (np.nan, np.nan))
                g = self.global_estimate[i]
                t = network.positions[i]
                err = float(np.hypot(*(g - t))) if not np.isnan(g[0]) else np.nan
                tag = "anchor" if network.is_anchor[i] and i not in tags else tags.get(i, UNRESOLVED)
                w.writerow([i, int(self.subnet[i]), tag, *map(repr, map(float, r)), *map(repr, map(float, g)), *map(repr, map(float, t)), repr(err)])


# ---------------------------------------------------------------- references


def _triangle_margin(a: float, b: float, c: float) -> float:
    return min(a + b - c, a + c - b, b + c - a)


def _triangles(A: np.ndarray) -> np.ndarray:
    """All (i, j, k), i < j < k, mutually adjacent in boolean matrix A."""
    up = np.triu(A, 1)
    out = []
    for i in range(len(A)):
        nb = np.nonzero(up[i])[0]
        if len(nb) < 2:
            continue
        sub = up[np.ix_(nb, nb)]
        jj, kk = np.nonzero(sub)
        if len(jj):
            out.append(np.column_stack([np.full(len(jj), i), nb[jj], nb[kk]]))
    return np.vstack(out) if out else np.empty((0, 3), dtype=np.int64)


def select_references(network: Network, subnet: Iterable[int], chunk: int = 4096) -> ReferenceTriple:
    """Pick the one-hop triangle that is hop-closest to the whole sub-network.

    Triangles failing the non-collinearity slack are discarded. The objective
    is the largest hop-sum from any member to the three corners; ties go to
    the smallest id triple. Roles follow id order: o < x < y.
    """
    members = np.array(sorted(set(int(v) for v in subnet)), dtype=np.int64)
    if len(members) < 4:
        raise NoReferenceTriple(f"no reference triple: subnet of {len(members)} nodes")
    H = hops_from_edges(network.n, network.edges, members, allow_disconnected=True)
    if (H < 0).any():
        raise NoReferenceTriple("no reference triple: subnet is disconnected")
    A = network.adjacency_matrix()[np.ix_(members, members)]
    tri = _triangles(A)
    slack = COLLINEAR_SLACK * network.L
    keep, dists = [], []
    for t in tri:
        o, x, y = (int(members[v]) for v in t)
        d_ox, d_oy, d_xy = measure_distance(network, o, x), measure_distance(network, o, y), measure_distance(network, x, y)
        if _triangle_margin(d_ox, d_oy, d_xy) >= slack:
            keep.append(t)
            dists.append((d_ox, d_oy, d_xy))
    if not keep:
        raise NoReferenceTriple("no reference triple: no non-collinear one-hop triangle")
    keep = np.array(keep)
    score = np.empty(len(keep), dtype=np.int64)
    for s in range(0, len(keep), chunk):
        t = keep[s:s + chunk]
        score[s:s + chunk] = (H[t[:, 0]] + H[t[:, 1]] + H[t[:, 2]]).max(axis=1)
    # triangles come out in lexicographic order, so argmin already breaks ties
    best = int(np.argmin(score))
    o, x, y = (int(members[v]) for v in keep[best])
    return ReferenceTriple(o, x, y, *dists[best])


# ---------------------------------------------------------------- solvers


def trilaterate(knowns, dists, L: float | None = None, check: bool = True) -> np.ndarray:
    """Least-squares position from three or more known points and ranges.

    The circle equations are linearised by subtracting the first one. With
    ``check`` the solution must reproduce every range to within 1e-6 * L.
    """
    K = np.asarray(knowns, dtype=float).reshape(-1, 2)
    d = np.asarray(dists, dtype=float).reshape(-1)
    if len(K) < 3 or len(K) != len(d):
        raise InconsistentTrilateration("inconsistent trilateration: need three or more ranges")
    scale = L if L else max(1.0, float(np.ptp(K, axis=0).max()), float(d.max()))
    c = K - K.mean(axis=0)
    sv = np.linalg.svd(c, compute_uv=False)
    if sv[-1] <= 1e-9 * max(sv[0], 1e-300):
        raise InconsistentTrilateration("inconsistent trilateration: known nodes are collinear")
    # work relative to the first known so the squared terms stay small
    R = K[1:] - K[0]
    A = 2.0 * R
    b = d[0] ** 2 - d[1:] ** 2 + (R ** 2).sum(axis=1)
    p = np.linalg.lstsq(A, b, rcond=None)[0] + K[0]
    if check:
        resid = np.abs(np.hypot(*(K - p).T) - d).max()
        if resid > RESIDUAL_TOL * scale:
            raise InconsistentTrilateration(f"inconsistent trilateration: residual {resid:.3g} m")
    return p


def circle_intersections(k1, k2, d1: float, d2: float, L: float | None = None) -> np.ndarray:
    """Intersection points of two circles: one row when tangent, two otherwise."""
    k1, k2 = np.asarray(k1, dtype=float), np.asarray(k2, dtype=float)
    v = k2 - k1
    D = float(np.hypot(*v))
    scale = L if L else max(1.0, D, d1, d2)
    tol = TANGENT_TOL * scale
    if D <= tol:
        raise NoIntersection("no intersection: concentric circles")
    u = v / D
    if abs(D - (d1 + d2)) <= tol:
        return (k1 + d1 * u)[None]
    if abs(D - abs(d1 - d2)) <= tol:
        return (k1 + (d1 if d1 >= d2 else -d1) * u)[None]
    if D > d1 + d2 or D < abs(d1 - d2):
        raise NoIntersection("no intersection: circles are disjoint or nested")
    a = (d1 * d1 - d2 * d2 + D * D) / (2.0 * D)
    h = np.sqrt(max(d1 * d1 - a * a, 0.0))
    base = k1 + a * u
    perp = np.array([-u[1], u[0]])
    return np.array([base + h * perp, base - h * perp])


def two_circle_locate(k1, k2, d1: float, d2: float, third, L: float | None = None) -> np.ndarray:
    """Position heard by exactly two knowns: the intersection farther from ``third``."""
    pts = circle_intersections(k1, k2, d1, d2, L)
    if len(pts) == 1:
        return pts[0]
    t = np.asarray(third, dtype=float)
    return pts[int(np.hypot(*(pts[1] - t)) > np.hypot(*(pts[0] - t)))]


def _excluded_intervals(k: np.ndarray, d: float, excluders: np.ndarray, L: float):
    """Angular intervals of C(k, d) lying within L of some excluder.

    Returns (intervals, full) where intervals are (centre, half_width) pairs
    and ``full`` counts excluders covering the whole circle.
    """
    out, full = [], 0
    for e in excluders:
        v = e - k
        D = float(np.hypot(*v))
        if D == 0.0:
            full += d <= L
            continue
        c = (d * d + D * D - L * L) / (2.0 * d * D)
        if c > 1.0:
            continue
        if c <= -1.0:
            full += 1
            continue
        out.append((float(np.arctan2(v[1], v[0])), float(np.arccos(c))))
    return out, full


def _arcs_with_counts(intervals) -> list[tuple[float, float, int]]:
    """Split [0, 2pi) at interval ends into (start, length, coverage) arcs."""
    cuts = {0.0}
    for c, h in intervals:
        cuts.add((c - h) % _TWO_PI)
        cuts.add((c + h) % _TWO_PI)
    cuts = sorted(cuts)
    arcs = []
    for s, e in zip(cuts, cuts[1:] + [cuts[0] + _TWO_PI]):
        if e - s <= 0.0:
            continue
        mid = 0.5 * (s + e)
        cover = sum(abs((mid - c + np.pi) % _TWO_PI - np.pi) < h for c, h in intervals)
        arcs.append((s, e - s, cover))
    return arcs


def _merge_runs(arcs, keep) -> list[tuple[float, float]]:
    """Join consecutive kept arcs (wrapping through angle 0) into (start, length)."""
    runs: list[list[float]] = []
    for s, ln, c in arcs:
        if not keep(c):
            runs.append(None)
            continue
        if runs and runs[-1] is not None:
            runs[-1][1] += ln
        else:
            runs.append([s, ln])
    if len(runs) > 1 and runs[0] is not None and runs[-1] is not None and runs[0][0] == 0.0:
        last = runs.pop()
        runs[0] = [last[0], last[1] + runs[0][1]]
    return [tuple(r) for r in runs if r is not None]


def _first_from_zero(run: tuple[float, float]) -> tuple[int, float]:
    # an arc that covers angle 0 counts as the first one met from 0
    s, ln = run
    return (0, 0.0) if s + ln > _TWO_PI or s == 0.0 else (1, s)


def arc_midpoint(k, d: float, excluders, L: float) -> tuple[np.ndarray, bool]:
    """Case-3 estimate and a low-confidence flag.

    Parts of the circle C(k, d) within L of any excluder are ruled out, and the
    midpoint of the longest surviving arc is returned. Equal arcs resolve to
    the first met going counter-clockwise from angle 0. When nothing survives,
    the arcs covered by the fewest excluders are used instead and the flag is set.
    """
    if not d > 0:
        raise ValueError("arc radius must be positive")
    k = np.asarray(k, dtype=float)
    ex = np.asarray(excluders, dtype=float).reshape(-1, 2)
    intervals, full = _excluded_intervals(k, d, ex, L)
    arcs = _arcs_with_counts(intervals)
    low = min(c for _, _, c in arcs)
    runs = _merge_runs(arcs, lambda c: c == low)
    s, ln = min(runs, key=lambda r: (-round(r[1], 12), _first_from_zero(r)))
    theta = s + 0.5 * ln if ln < _TWO_PI else 0.0
    return k + d * np.array([np.cos(theta), np.sin(theta)]), bool(low + full)


def arc_midpoint_locate(k, d: float, excluders, L: float) -> np.ndarray:
    return arc_midpoint(k, d, excluders, L)[0]


# ---------------------------------------------------------------- frames


def _place_references(refs: ReferenceTriple) -> dict[int, np.ndarray]:
    xo = (refs.d_ox ** 2 + refs.d_oy ** 2 - refs.d_xy ** 2) / (2.0 * refs.d_ox)
    yo = np.sqrt(max(refs.d_oy ** 2 - xo * xo, 0.0))
    return {refs.o: np.zeros(2), refs.x: np.array([refs.d_ox, 0.0]), refs.y: np.array([xo, yo])}


class _Grower:
    """Mutable state for growing one frame's known set."""

    def __init__(self, network: Network, members: np.ndarray, frame: RelativeFrame):
        self.net = network
        self.frame = frame
        self.inside = set(int(v) for v in members)
        self.nbrs = {v: [u for u in network.neighbors[v] if u in self.inside] for v in self.inside}
        self.strict = network.ranging.kind == "exact"

    def is_strict(self, basis) -> bool:
        # consistency checks only make sense when the basis itself is exact
        return self.strict and not any(u in self.frame.uncertain for u in basis)

    def known_nbrs(self, v: int) -> list[int]:
        return [u for u in self.nbrs[v] if u in self.frame.coords]

    def add(self, v: int, p: np.ndarray, tag, basis: Sequence[int] = (), guess: bool = False) -> None:
        self.frame.coords[v] = np.asarray(p, dtype=float)
        self.frame.case_tag[v] = tag
        self.frame.known_set.append(v)
        if guess or any(u in self.frame.uncertain for u in basis):
            self.frame.uncertain.add(v)

    def pending(self) -> list[int]:
        return sorted(v for v in self.inside if v not in self.frame.coords)

    def violations(self, v: int, p: np.ndarray) -> int:
        """Known nodes within range of ``p`` that ``v`` does not hear."""
        heard = set(self.nbrs[v])
        L = self.net.L
        return sum(
            1 for u, q in self.frame.coords.items()
            if u not in heard and np.hypot(*(q - p)) <= L * (1 - 1e-9)
        )

    def two_circle(self, v: int, a: int, b: int) -> tuple[np.ndarray, bool] | None:
        """Case-2 candidate for v from knowns a, b and whether it is unambiguous."""
        c = self.frame.coords
        try:
            pts = circle_intersections(c[a], c[b], self.net.distance(v, a), self.net.distance(v, b), self.net.L)
        except NoIntersection:
            if self.is_strict((a, b)):
                return None
            pts = _nearest_points(c[a], c[b], self.net.distance(v, a), self.net.distance(v, b))
        if len(pts) == 1:
            return pts[0], True
        viol = [self.violations(v, p) for p in pts]
        # silence also comes from walls, so it only settles the choice when
        # one candidate is fully consistent with it
        if min(viol) == 0 and max(viol) >= VIOLATION_MARGIN:
            return pts[int(viol[1] < viol[0])], True
        # fall back on the silent reference node, as in the basic rule
        third = self._silent_reference(v)
        if third is None:
            return pts[0], False
        d = [np.hypot(*(p - c[third])) for p in pts]
        return pts[int(d[1] > d[0])], False

    def _silent_reference(self, v: int) -> int | None:
        refs = self.frame.refs
        heard = set(self.nbrs[v])
        silent = [r for r in refs.nodes if r not in heard] if refs else []
        if silent:
            return silent[0]
        others = [u for u in self.frame.coords if u not in heard]
        if not others:
            return None
        p = self.frame.coords
        ka = self.known_nbrs(v)
        centre = np.mean([p[u] for u in ka], axis=0)
        return min(others, key=lambda u: (np.hypot(*(p[u] - centre)), u))

    def case1(self, v: int, kn: list[int]) -> np.ndarray | None:
        c = self.frame.coords
        strict = self.is_strict(kn)
        # without a residual check, nearly collinear knowns cannot rule out the mirror
        if not strict and not _spread_ok(np.array([c[u] for u in kn]), COLLINEAR_SLACK * self.net.L):
            return None
        try:
            p = trilaterate([c[u] for u in kn], [self.net.distance(v, u) for u in kn], self.net.L, check=strict)
        except InconsistentTrilateration:
            return None
        if strict:
            return p
        return _settle_noisy(np.array([c[u] for u in kn]), np.array([self.net.distance(v, u) for u in kn]), p, self.net.ranging.sigma)

    def case1_sweep(self, well_spread: bool = True) -> bool:
        progress = False
        slack = COLLINEAR_SLACK * self.net.L
        for v in self.pending():
            kn = self.known_nbrs(v)
            if len(kn) >= 3:
                # thin triangles amplify earlier rounding, so they wait their turn
                if well_spread and not _spread_ok(np.array([self.frame.coords[u] for u in kn]), slack):
                    continue
                p = self.case1(v, kn)
                if p is not None:
                    self.add(v, p, 1, kn)
                    progress = True
        return progress

    def _best_pair(self, v: int, kn: list[int]) -> tuple[np.ndarray, bool] | None:
        # poorly spread knowns: use the two farthest apart and settle the mirror as in Case 2
        c = self.frame.coords
        a, b = max(itertools.combinations(kn, 2), key=lambda ab: np.hypot(*(c[ab[0]] - c[ab[1]])))
        return self.two_circle(v, a, b)

    def case2_sweep(self, allow_ambiguous: bool) -> bool:
        """Place one node heard by two knowns (or by badly spread ones)."""
        for v in self.pending():
            kn = self.known_nbrs(v)
            if len(kn) < 2:
                continue
            got = self.two_circle(v, *kn) if len(kn) == 2 else self._best_pair(v, kn)
            if got is None:
                continue
            p, unique = got
            if unique or allow_ambiguous:
                self.add(v, p, 2 if len(kn) == 2 else 1, kn, guess=not unique)
                return True
        return False

    def case3_sweep(self) -> bool:
        """Place a single node heard by one known; the caller retries Cases 1-2 next."""
        for v in self.pending():
            kn = self.known_nbrs(v)
            if len(kn) != 1:
                continue
            (u,) = kn
            heard = set(self.nbrs[v])
            ex = [q for w, q in self.frame.coords.items() if w not in heard]
            d = self.net.distance(v, u)
            if d <= 0:
                p, low = self.frame.coords[u].copy(), True
            else:
                p, low = arc_midpoint(self.frame.coords[u], d, ex, self.net.L)
            self.add(v, p, 3, kn, guess=True)
            if low:
                self.frame.low_confidence.add(v)
            return True
        return False


def _range_fit(K: np.ndarray, d: np.ndarray, p0: np.ndarray) -> tuple[np.ndarray, float]:
    sol = least_squares(lambda p: np.hypot(*(K - p).T) - d, p0, method="lm")
    return sol.x, float(np.sqrt(np.mean(sol.fun ** 2)))


def _settle_noisy(K: np.ndarray, d: np.ndarray, p: np.ndarray, sigma: float) -> np.ndarray | None:
    """Refine a noisy trilateration, or None when its mirror fits about as well.

    With thin known triangles the reflection across their main axis matches
    the ranges to within the noise, and taking either side would fold the frame.
    """
    p, rms = _range_fit(K, d, p)
    centre = K.mean(axis=0)
    axis = np.linalg.svd(K - centre)[2][0]
    off = p - centre
    q, rms_q = _range_fit(K, d, centre + 2 * np.dot(off, axis) * axis - off)
    if np.hypot(*(q - p)) > MIRROR_SEPARATION * sigma and rms_q <= rms + MIRROR_SEPARATION * sigma / 2:
        return None
    return p


def _nearest_points(k1, k2, d1, d2) -> np.ndarray:
    """Best single point when noisy ranges leave two circles apart."""
    k1, k2 = np.asarray(k1, float), np.asarray(k2, float)
    v = k2 - k1
    D = float(np.hypot(*v))
    if D == 0.0:
        return (k1 + np.array([d1, 0.0]))[None]
    u = v / D
    if D > d1 + d2:
        t = d1 + 0.5 * (D - d1 - d2)
    elif d1 >= d2:
        t = 0.5 * (d1 + D + d2)
    else:
        t = -0.5 * (d1 + d2 - D)
    return (k1 + t * u)[None]


def _grow(g: _Grower) -> None:
    while True:
        if g.case1_sweep():
            if not g.strict:
                # noisy ranges compound along the growth front; refit before going on
                _polish(g.net, g.frame, g.nbrs)
            continue
        if g.case1_sweep(well_spread=False):
            continue
        if g.case2_sweep(allow_ambiguous=False):
            continue
        if g.case2_sweep(allow_ambiguous=True):
            continue
        if g.case3_sweep():
            continue
        break


def localize_subnetwork(network: Network, subnet: Iterable[int], refs: ReferenceTriple, label: int = 0) -> RelativeFrame:
    """Grow relative coordinates outward from the reference triangle.

    Case 1 (three or more known neighbours) always goes first, then Case 2
    nodes whose mirror ambiguity can be settled by the silence of nearby known
    nodes. Only when both stall are the ambiguous Case-2 nodes and then the
    Case-3 nodes (one known neighbour) placed. With exact ranging, clusters
    that were entered through such a guess are then relocalized on their own
    and fitted back as rigid pieces wherever that fit is unique.
    """
    members = np.array(sorted(set(int(v) for v in subnet)), dtype=np.int64)
    frame = RelativeFrame(label, members, refs=refs)
    g = _Grower(network, members, frame)
    for v, p in _place_references(refs).items():
        g.add(v, p, REFERENCE)
    _grow(g)
    if g.strict:
        while _stitch(network, frame, g):
            _grow(g)
    for v in g.pending():
        frame.case_tag[v] = UNRESOLVED
    _polish(network, frame, g.nbrs)
    return frame


def _forget(frame: RelativeFrame, nodes) -> None:
    drop = set(nodes)
    for v in drop:
        frame.coords.pop(v, None)
        frame.case_tag.pop(v, None)
    frame.known_set = [v for v in frame.known_set if v not in drop]
    frame.uncertain -= drop
    frame.low_confidence -= drop


def _stitch(network: Network, frame: RelativeFrame, g: _Grower) -> bool:
    """Refit guess-dependent clusters of a frame as rigid pieces.

    Each connected cluster of non-exact nodes gets a frame of its own. Its
    exactly placed part is then posed inside the parent frame by fitting
    every measured link to the parent's exact nodes, with reflection allowed.
    A pose is accepted only when it reproduces those links, puts no node in
    range of an exact node it does not hear, and is the only such pose.
    On success all remaining guesses are dropped so growth can redo them.
    """
    weak = np.array(sorted(v for v in frame.known_set if not frame.exact(v)), dtype=np.int64)
    if len(weak) < 4:
        return False
    done = False
    for members in _components(network, weak):
        if len(members) < 4:
            continue
        inside = set(int(v) for v in members)
        try:
            refs = select_references(network, members)
        except NoReferenceTriple:
            continue
        sub = localize_subnetwork(network, members, refs, frame.subnet)
        E = [v for v in sub.known_set if sub.exact(v)]
        links = [(w, u) for w in E for u in g.nbrs[w] if u not in inside and frame.exact(u)]
        if len(links) < 3 or len({u for _, u in links}) < 2:
            continue
        T = _unique_pose(network, frame, g, sub, E, links)
        if T is None:
            continue
        moved = T.apply(np.array([sub.coords[v] for v in E]))
        _forget(frame, E)
        for v, p in zip(E, moved):
            t = sub.tag(v)
            g.add(v, p, 1 if t == REFERENCE else t)
        done = True
    if done:
        _forget(frame, [v for v in frame.known_set if not frame.exact(v)])
    return done


def _fit_poses(P, Q, d, L: float, fixed=None, starts: int = 24) -> list[FrameTransform]:
    """Every distinct rigid pose (reflection allowed) mapping points ``P`` to
    distance ``d`` from ``Q``; ``fixed`` adds exact point correspondences."""
    FP, FQ = (np.empty((0, 2)), np.empty((0, 2))) if fixed is None else map(np.asarray, fixed)
    allP = np.vstack([P, FP])
    allQ = np.vstack([Q, FQ])
    found: list[tuple[FrameTransform, np.ndarray]] = []
    for flip in (1.0, -1.0):
        S = np.diag([1.0, flip])

        def rot(theta):
            c, s_ = np.cos(theta), np.sin(theta)
            return np.array([[c, -s_], [s_, c]]) @ S

        def resid(x):
            M = rot(x[0])
            r = np.hypot(*(P @ M.T + x[1:] - Q).T) - d
            return np.concatenate([r, (FP @ M.T + x[1:] - FQ).ravel()])

        for theta0 in np.linspace(0.0, _TWO_PI, starts, endpoint=False):
            x0 = np.concatenate([[theta0], allQ.mean(axis=0) - rot(theta0) @ allP.mean(axis=0)])
            sol = least_squares(resid, x0, xtol=1e-15, ftol=1e-15, gtol=1e-15)
            if np.abs(sol.fun).max() > RESIDUAL_TOL * L:
                continue
            M = rot(sol.x[0])
            T = FrameTransform(M[0, 0], M[0, 1], M[1, 0], M[1, 1], sol.x[1], sol.x[2])
            placed = T.apply(allP)
            if not any(np.abs(placed - q).max() <= 1e-6 * L for _, q in found):
                found.append((T, placed))
    return [T for T, _ in found]


def _pick_pose(poses, pts, ids, heard, others, L: float) -> FrameTransform | None:
    """The only pose, or the only one that puts no node in range of an outside
    node it does not hear; None when the choice stays open."""
    if len(poses) <= 1:
        return poses[0] if poses else None
    oid = np.array([u for u, _ in others], dtype=np.int64)
    oq = np.array([q for _, q in others]).reshape(-1, 2)
    clean = []
    for T in poses:
        placed = T.apply(pts)
        near = np.hypot(*(placed[:, None, :] - oq[None]).transpose(2, 0, 1)) <= L * (1 - 1e-9)
        if not any(int(oid[j]) not in heard[v] for k, v in enumerate(ids) for j in np.nonzero(near[k])[0]):
            clean.append(T)
    return clean[0] if len(clean) == 1 else None


def _unique_pose(network, frame, g, sub, E, links) -> FrameTransform | None:
    """The single pose of ``sub`` inside ``frame`` consistent with ``links``."""
    P = np.array([sub.coords[w] for w, _ in links])
    Q = np.array([frame.coords[u] for _, u in links])
    d = np.array([network.distance(w, u) for w, u in links])
    poses = _fit_poses(P, Q, d, network.L)
    inside = set(int(v) for v in sub.nodes)
    others = [(u, q) for u, q in frame.coords.items() if u not in inside and frame.exact(u)]
    heard = {v: set(g.nbrs[v]) for v in E}
    return _pick_pose(poses, np.array([sub.coords[v] for v in E]), E, heard, others, network.L)


def _pose_from_links(network: Network, frame: RelativeFrame, est: np.ndarray, sure: np.ndarray) -> FrameTransform | None:
    """Tie a frame short of anchors to the global frame through measured links
    between its exact nodes and exactly placed nodes outside it."""
    inside = set(int(v) for v in frame.nodes)
    E = [v for v in frame.known_set if frame.exact(v)]
    links = [(w, u) for w in E for u in network.neighbors[w] if sure[u] and (u not in inside or not frame.exact(u))]
    fixed = [v for v in E if network.is_anchor[v]]
    if len({u for _, u in links}) + 2 * len(fixed) < 3 or len(links) + 2 * len(fixed) < 3:
        return None
    P = np.array([frame.coords[w] for w, _ in links]).reshape(-1, 2)
    Q = est[[u for _, u in links]].reshape(-1, 2)
    d = np.array([network.distance(w, u) for w, u in links])
    F = (np.array([frame.coords[v] for v in fixed]).reshape(-1, 2), network.positions[fixed].reshape(-1, 2))
    poses = _fit_poses(P, Q, d, network.L, F)
    others = [(int(u), est[u]) for u in np.nonzero(sure)[0] if int(u) not in inside or not frame.exact(int(u))]
    heard = {v: set(network.neighbors[v]) for v in E}
    return _pick_pose(poses, np.array([frame.coords[v] for v in E]), E, heard, others, network.L)


def _polish(network: Network, frame: RelativeFrame, nbrs: dict[int, list[int]], iters: int = 3, tol: float = 1e-13) -> None:
    """Joint Gauss-Newton pass over the exactly placed nodes of a frame.

    Growth solves each node from whatever happened to be known at the time,
    so rounding accumulates and long thin corridors slowly bend. Fitting all
    measured links between exact nodes at once removes that drift. The
    reference triangle stays fixed so the frame does not move.
    """
    fixed = set(frame.refs.nodes) if frame.refs else set()
    exact = [v for v in frame.known_set if frame.exact(v)]
    movable = [v for v in exact if v not in fixed]
    if not movable:
        return
    col = {v: k for k, v in enumerate(movable)}
    ok = set(exact)
    links = [(v, u) for v in exact for u in nbrs[v] if u in ok and v < u]
    if not links:
        return
    a = np.array([v for v, _ in links])
    b = np.array([u for _, u in links])
    d = np.array([network.distance(v, u) for v, u in links])
    c = frame.coords
    P = {v: c[v].copy() for v in exact}
    ca = np.array([col.get(int(v), -1) for v in a])
    cb = np.array([col.get(int(u), -1) for u in b])
    m = len(links)
    if network.ranging.kind != "exact":
        _polish_noisy(P, col, a, b, d, ca, cb, c)
        return
    for _ in range(iters):
        pa = np.array([P[int(v)] for v in a])
        pb = np.array([P[int(u)] for u in b])
        diff = pa - pb
        dist = np.hypot(diff[:, 0], diff[:, 1])
        if (dist == 0).any():
            return
        r = dist - d
        unit = diff / dist[:, None]
        rows, cols, vals = [], [], []
        for cc, sign in ((ca, 1.0), (cb, -1.0)):
            sel = cc >= 0
            for axis in (0, 1):
                rows.append(np.nonzero(sel)[0])
                cols.append(2 * cc[sel] + axis)
                vals.append(sign * unit[sel, axis])
        J = coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, 2 * len(movable))).tocsr()
        N = (J.T @ J).tocsc()
        try:
            step = spsolve(N, -(J.T @ r))
        except RuntimeError:
            return
        if not np.all(np.isfinite(step)):
            return
        step = step.reshape(-1, 2)
        if np.abs(step).max() > 0.5 * network.L:
            # a node without enough links to pin it down; leave the frame alone
            return
        for v, k in col.items():
            P[v] = P[v] + step[k]
        if np.abs(step).max() <= tol * network.L:
            break
    for v in movable:
        c[v] = P[v]


def _polish_noisy(P, col, a, b, d, ca, cb, coords) -> None:
    """Trust-region fit of the movable nodes to noisy ranges.

    Growth under noise drifts by metres, far outside the region where plain
    Gauss-Newton steps are safe, so the damped solver takes over.
    """
    movable = list(col)
    x0 = np.concatenate([P[v] for v in movable])
    fixed_a = np.array([P[int(v)] for v in a])
    fixed_b = np.array([P[int(u)] for u in b])
    sa, sb = ca >= 0, cb >= 0
    m = len(d)
    rows = np.concatenate([np.nonzero(sa)[0]] * 2 + [np.nonzero(sb)[0]] * 2)
    cols = np.concatenate([2 * ca[sa], 2 * ca[sa] + 1, 2 * cb[sb], 2 * cb[sb] + 1])
    sparsity = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(m, len(x0))).tocsr()

    def points(x):
        X = x.reshape(-1, 2)
        pa, pb = fixed_a.copy(), fixed_b.copy()
        pa[sa], pb[sb] = X[ca[sa]], X[cb[sb]]
        return pa, pb

    def resid(x):
        pa, pb = points(x)
        return np.hypot(*(pa - pb).T) - d

    def jac(x):
        pa, pb = points(x)
        diff = pa - pb
        unit = diff / np.maximum(np.hypot(*diff.T), 1e-12)[:, None]
        vals = np.concatenate([unit[sa, 0], unit[sa, 1], -unit[sb, 0], -unit[sb, 1]])
        return coo_matrix((vals, (rows, cols)), shape=sparsity.shape).tocsr()

    sol = least_squares(resid, x0, jac=jac, method="trf", tr_solver="lsmr", max_nfev=100)
    if np.all(np.isfinite(sol.x)) and (sol.fun ** 2).sum() < (resid(x0) ** 2).sum():
        for v, k in col.items():
            coords[v] = sol.x[2 * k:2 * k + 2]


# ---------------------------------------------------------------- calibration


def _spread_ok(pts: np.ndarray, slack: float) -> bool:
    """True when some triple of ``pts`` clears the triangle slack."""
    n = len(pts)
    if n < 3:
        return False
    D = np.hypot(*(pts[:, None, :] - pts[None, :, :]).transpose(2, 0, 1))
    i, j, k = np.array(list(itertools.combinations(range(n), 3))).T
    a, b, c = D[i, j], D[i, k], D[j, k]
    margin = np.minimum(np.minimum(a + b - c, a + c - b), b + c - a)
    return bool(margin.max() >= slack)


def fit_transform(rel, glob) -> FrameTransform:
    """Least-squares 6-coefficient affine map taking ``rel`` onto ``glob``."""
    rel = np.asarray(rel, dtype=float).reshape(-1, 2)
    glob = np.asarray(glob, dtype=float).reshape(-1, 2)
    # centring keeps the system well conditioned far from the origin
    mr, mg = rel.mean(axis=0), glob.mean(axis=0)
    M = np.linalg.lstsq(rel - mr, glob - mg, rcond=None)[0].T
    if abs(np.linalg.det(M)) <= 1e-9:
        raise UncalibratableSubnet("uncalibratable subnet: singular transform")
    t = mg - M @ mr
    return FrameTransform(M[0, 0], M[0, 1], M[1, 0], M[1, 1], t[0], t[1])


def calibrate(frame: RelativeFrame, anchors: Sequence[tuple[int, Sequence[float]]], L: float = 15.0) -> tuple[FrameTransform, bool]:
    """Affine map of the frame onto global coordinates from its anchors.

    Anchors placed exactly (reference triangle or Cases 1-2, not resting on a
    Case-3 guess) are used when at least three of them span a triangle; otherwise Case-3 anchors are added
    and the returned deficiency flag is True.
    """
    slack = COLLINEAR_SLACK * L
    placed = [(a, g) for a, g in anchors if a in frame.coords]
    exact = [(a, g) for a, g in placed if frame.exact(a)]
    for use, deficient in ((exact, False), (placed, True)):
        rel = np.array([frame.coords[a] for a, _ in use]).reshape(-1, 2)
        if len(use) >= 3 and _spread_ok(rel, slack):
            return fit_transform(rel, [g for _, g in use]), deficient
    raise UncalibratableSubnet(f"uncalibratable subnet {frame.subnet}: {len(placed)} usable anchors")


# ---------------------------------------------------------------- whole network


def _calibrate_frame(frame: RelativeFrame, anchors, L: float) -> tuple[FrameTransform, bool]:
    """Calibrate a range-built frame, refusing maps that stretch it.

    Ranges fix a frame up to rotation and reflection, so a map far from
    orthogonal means folded coordinates or anchors too close to a line.
    """
    T, deficient = calibrate(frame, anchors, L)
    sv = np.linalg.svd([[T.R1, T.R2], [T.R3, T.R4]], compute_uv=False)
    if sv[0] > 1 + STRETCH_TOL or sv[1] < 1 / (1 + STRETCH_TOL):
        raise UncalibratableSubnet(f"uncalibratable subnet {frame.subnet}: map stretches by {sv[0]:.3g}/{sv[1]:.3g}")
    return T, deficient


def _components(network: Network, members: np.ndarray) -> list[np.ndarray]:
    local = {int(v): k for k, v in enumerate(members)}
    e = [(local[int(i)], local[int(j)]) for i, j in network.edges if int(i) in local and int(j) in local]
    e = np.array(e, dtype=np.int64).reshape(-1, 2)
    g = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(len(members), len(members)))
    _, lab = connected_components(g, directed=False)
    return [members[lab == c] for c in np.unique(lab)]


def localize(network: Network, labels=None) -> LocalizationResult:
    """Localize every sub-network and map it to global coordinates.

    Each connected piece of a sub-network gets its own frame. Anchors keep
    their true position. A frame short of usable anchors is tied to the global
    frame through members that trilaterate exactly from already-calibrated
    neighbours in other frames. Guessed nodes with three exact neighbours in
    any frame are then re-trilaterated, and nodes still left over are
    trilaterated directly from localized neighbours when possible.
    """
    n = network.n
    labels = np.ones(n, dtype=np.int64) if labels is None else np.asarray(labels, dtype=np.int64)
    est = np.full((n, 2), np.nan)
    est[network.anchors] = network.positions[network.anchors]
    sure = network.is_anchor.copy()  # estimates that rest on no guess
    anchors = [(int(a), network.positions[a]) for a in network.anchors]
    frames: list[tuple[RelativeFrame, FrameTransform | None]] = []
    flags: list[str] = []
    pending: list[RelativeFrame] = []

    for s in np.unique(labels):
        for members in _components(network, np.nonzero(labels == s)[0]):
            try:
                refs = select_references(network, members)
            except NoReferenceTriple:
                flags.append(f"no-reference-triple:{s}")
                continue
            frame = localize_subnetwork(network, members, refs, int(s))
            try:
                T, deficient = _calibrate_frame(frame, anchors, network.L)
            except UncalibratableSubnet:
                pending.append(frame)
                continue
            if deficient:
                flags.append(f"anchor-deficient:{s}")
            _apply(frame, T, est, sure, network, trusted=not deficient)
            frames.append((frame, T))

    # frames without enough anchors borrow exact positions from calibrated
    # neighbours, directly or through upgraded border nodes
    progress = True
    while pending and progress:
        progress = _upgrade(network, est, sure) > 0
        for frame in list(pending):
            pseudo = _bridge_points(network, frame, est, sure)
            try:
                T, deficient = _calibrate_frame(frame, anchors + pseudo, network.L)
                flags.append(f"bridged:{frame.subnet}")
            except UncalibratableSubnet:
                # failing that, fit the frame's pose to its measured links
                T, deficient = _pose_from_links(network, frame, est, sure), False
                if T is None:
                    continue
                flags.append(f"linked:{frame.subnet}")
            _apply(frame, T, est, sure, network, trusted=not deficient)
            frames.append((frame, T))
            pending.remove(frame)
            progress = True
    for frame in pending:
        flags.append(f"uncalibratable:{frame.subnet}")
        frames.append((frame, None))

    # regions reached only through a Case-3 guess get a fresh frame of their own
    todo = [f for f, T in frames if T is not None]
    for _ in range(3):
        nxt = []
        for frame in todo:
            for sub in _reseed(network, frame, anchors, est, sure):
                flags.append(f"reseeded:{frame.subnet}")
                frames.append(sub)
                nxt.append(sub[0])
        if not nxt:
            break
        todo = nxt

    if _upgrade(network, est, sure):
        flags.append("cross-area")
    left = _fill_leftovers(network, est)
    if left:
        flags.append(f"unlocalized:{left}")
    return LocalizationResult(frames, est, labels, flags)


def _reseed(network: Network, frame: RelativeFrame, anchors, est: np.ndarray, sure: np.ndarray) -> list[tuple[RelativeFrame, FrameTransform]]:
    """Relocalize the guess-dependent part of a frame from a new reference triangle.

    The new frame is kept only if its own exactly placed anchors (or exact
    positions borrowed from neighbours) calibrate it, or its links to exactly
    placed nodes fix a single pose; otherwise the Case-3 estimates stand.
    """
    weak = np.array(sorted(v for v in frame.nodes if not frame.exact(int(v))), dtype=np.int64)
    out = []
    if len(weak) < 4:
        return out
    for members in _components(network, weak):
        if len(members) < 4:
            continue
        try:
            refs = select_references(network, members)
        except NoReferenceTriple:
            continue
        sub = localize_subnetwork(network, members, refs, frame.subnet)
        try:
            T, deficient = _calibrate_frame(sub, anchors + _bridge_points(network, sub, est, sure), network.L)
        except UncalibratableSubnet:
            T, deficient = None, True
        if deficient:
            T = _pose_from_links(network, sub, est, sure)
            if T is None:
                continue
        _apply(sub, T, est, sure, network)
        out.append((sub, T))
    return out


def _apply(frame: RelativeFrame, T: FrameTransform, est: np.ndarray, sure: np.ndarray, network: Network, trusted: bool = True) -> None:
    ids = [v for v in frame.known_set if not network.is_anchor[v]]
    if ids:
        est[ids] = T.apply(np.array([frame.coords[v] for v in ids]))
        sure[ids] = [trusted and frame.exact(v) for v in ids]


def _upgrade(network: Network, est: np.ndarray, sure: np.ndarray) -> int:
    """Re-trilaterate guessed nodes from exact neighbours in any sub-network.

    Links across area borders are still line-of-sight ranges, so once both
    sides are calibrated they can replace a Case-3 guess. Returns the number
    of nodes upgraded.
    """
    strict = network.ranging.kind == "exact"
    done = 0
    progress = True
    while progress:
        progress = False
        for v in np.nonzero(~sure)[0]:
            kn = [u for u in network.neighbors[v] if sure[u]]
            if len(kn) < 3 or not _spread_ok(est[kn], COLLINEAR_SLACK * network.L):
                continue
            try:
                est[v] = trilaterate(est[kn], [network.distance(v, u) for u in kn], network.L, check=strict)
            except InconsistentTrilateration:
                continue
            sure[v] = True
            done += 1
            progress = True
    return done


def _bridge_points(network: Network, frame: RelativeFrame, est: np.ndarray, sure: np.ndarray) -> list[tuple[int, np.ndarray]]:
    out = []
    inside = set(int(v) for v in frame.nodes)
    for v in frame.known_set:
        if not frame.exact(v) or network.is_anchor[v]:
            continue
        outer = [u for u in network.neighbors[v] if sure[u] and (u not in inside or not frame.exact(u))]
        if len(outer) < 3:
            continue
        try:
            p = trilaterate(est[outer], [network.distance(v, u) for u in outer], network.L, check=network.ranging.kind == "exact")
        except InconsistentTrilateration:
            continue
        out.append((v, p))
    return out


def _fill_leftovers(network: Network, est: np.ndarray) -> int:
    """Trilaterate unlocalized nodes from localized neighbours; return how many remain."""
    strict = network.ranging.kind == "exact"
    progress = True
    while progress:
        progress = False
        for v in np.nonzero(np.isnan(est[:, 0]))[0]:
            kn = [u for u in network.neighbors[v] if not np.isnan(est[u, 0])]
            if len(kn) < 3:
                continue
            try:
                est[v] = trilaterate(est[kn], [network.distance(v, u) for u in kn], network.L, check=strict)
                progress = True
            except InconsistentTrilateration:
                continue
    return int(np.isnan(est[:, 0]).sum())
