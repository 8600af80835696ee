"""Obstacles, deployment areas and line-of-sight predicates.

Coordinates are meters in a frame whose origin is the lower-left corner of
the deployment area. Obstacles are polygons or circles; a scenario may hold
several disjoint ones, and blocking is the union of the per-obstacle tests.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Union

import numpy as np

from .errors import GeometryError

TOL = 1e-9
# segments passing closer than this to a polygon vertex, or with an endpoint
# this close to an edge, are re-checked by the exact scalar routine
_DEGENERATE = 1e-7

Point2D = tuple[float, float]

CANONICAL_SCENARIOS = (
    "c_shape",
    "s_shape",
    "h_shape",
    "rectangular",
    "circular",
    "asymmetric_multi_rectangular",
    "maze",
    "smiling_face",
)

_ALIASES = {
    "c-shape": "c_shape",
    "s-shape": "s_shape",
    "h-shape": "h_shape",
    "rectangle": "rectangular",
    "circle": "circular",
    "asymmetric": "asymmetric_multi_rectangular",
    "asymmetric-multi-rectangular": "asymmetric_multi_rectangular",
    "maze-like": "maze",
    "maze_like": "maze",
    "smiling-face": "smiling_face",
}


def _cross(ax, ay, bx, by):
    return ax * by - ay * bx


def _point_segment_distance(p, a, b) -> float:
    ax, ay = a
    dx, dy = b[0] - ax, b[1] - ay
    den = dx * dx + dy * dy
    if den == 0.0:
        return math.hypot(p[0] - ax, p[1] - ay)
    t = ((p[0] - ax) * dx + (p[1] - ay) * dy) / den
    t = min(1.0, max(0.0, t))
    return math.hypot(p[0] - ax - t * dx, p[1] - ay - t * dy)


@dataclass(frozen=True)
class Polygon:
    vertices: tuple[Point2D, ...]

    def __post_init__(self):
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        object.__setattr__(self, "vertices", verts)
        if len(verts) < 3:
            raise GeometryError("polygon needs at least 3 vertices")
        if not all(math.isfinite(c) for v in verts for c in v):
            raise GeometryError("polygon vertices must be finite")
        if abs(self.signed_area) <= TOL:
            raise GeometryError("polygon has zero area")
        if not self._is_simple():
            raise GeometryError("polygon is self-intersecting")

    @property
    def kind(self) -> str:
        return "polygon"

    @property
    def edges(self) -> list[tuple[Point2D, Point2D]]:
        v = self.vertices
        return [(v[i], v[(i + 1) % len(v)]) for i in range(len(v))]

    @property
    def signed_area(self) -> float:
        v = self.vertices
        s = 0.0
        for i in range(len(v)):
            x0, y0 = v[i]
            x1, y1 = v[(i + 1) % len(v)]
            s += x0 * y1 - x1 * y0
        return 0.5 * s

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        xs = [x for x, _ in self.vertices]
        ys = [y for _, y in self.vertices]
        return min(xs), min(ys), max(xs), max(ys)

    def _is_simple(self) -> bool:
        edges = self.edges
        n = len(edges)
        for i in range(n):
            for j in range(i + 1, n):
                if j == i + 1 or (i == 0 and j == n - 1):
                    continue
                if _segments_touch(*edges[i], *edges[j]):
                    return False
        return True

    def boundary_distance(self, p: Point2D) -> float:
        return min(_point_segment_distance(p, a, b) for a, b in self.edges)

    def contains(self, p: Point2D) -> bool:
        """Even-odd ray casting; boundary points are unspecified."""
        x, y = p
        inside = False
        for (x0, y0), (x1, y1) in self.edges:
            if (y0 > y) != (y1 > y):
                xc = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
                if xc > x:
                    inside = not inside
        return inside

    def strictly_contains(self, p: Point2D, tol: float = TOL) -> bool:
        return self.contains(p) and self.boundary_distance(p) > tol

    def convex_vertices(self) -> list[bool]:
        """Per vertex: True where the obstacle's interior angle is below 180 degrees."""
        v = self.vertices
        n = len(v)
        orient = 1.0 if self.signed_area > 0 else -1.0
        out = []
        for i in range(n):
            a, b, c = v[i - 1], v[i], v[(i + 1) % n]
            turn = _cross(b[0] - a[0], b[1] - a[1], c[0] - b[0], c[1] - b[1])
            out.append(turn * orient > TOL)
        return out

    def to_dict(self) -> dict:
        return {"kind": "polygon", "vertices": [list(v) for v in self.vertices]}


@dataclass(frozen=True)
class Circle:
    center: Point2D
    radius: float

    def __post_init__(self):
        c = (float(self.center[0]), float(self.center[1]))
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))
        if not (math.isfinite(c[0]) and math.isfinite(c[1])):
            raise GeometryError("circle center must be finite")
        if not self.radius > 0:
            raise GeometryError("circle radius must be positive")

    @property
    def kind(self) -> str:
        return "circle"

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        (x, y), r = self.center, self.radius
        return x - r, y - r, x + r, y + r

    def strictly_contains(self, p: Point2D, tol: float = TOL) -> bool:
        return math.hypot(p[0] - self.center[0], p[1] - self.center[1]) < self.radius - tol

    def to_dict(self) -> dict:
        return {"kind": "circle", "center": list(self.center), "radius": self.radius}


Obstacle = Union[Polygon, Circle]


@dataclass(frozen=True)
class Scenario:
    name: str
    width: float
    height: float
    obstacles: tuple[Obstacle, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        if not (self.width > 0 and self.height > 0):
            raise GeometryError("area width and height must be positive")
        for ob in self.obstacles:
            x0, y0, x1, y1 = ob.bbox
            if x0 < -TOL or y0 < -TOL or x1 > self.width + TOL or y1 > self.height + TOL:
                raise GeometryError(f"obstacle {ob.to_dict()} leaves the deployment area")

    @property
    def polygons(self) -> list[Polygon]:
        return [o for o in self.obstacles if isinstance(o, Polygon)]

    @property
    def circles(self) -> list[Circle]:
        return [o for o in self.obstacles if isinstance(o, Circle)]

    def check_edges(self, L: float) -> None:
        """Every polygon edge must be longer than the radio range."""
        for poly in self.polygons:
            for a, b in poly.edges:
                if math.dist(a, b) <= L:
                    raise GeometryError(
                        f"polygon edge {a}-{b} is not longer than the radio range {L}"
                    )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "width": self.width,
            "height": self.height,
            "obstacles": [o.to_dict() for o in self.obstacles],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        obstacles = []
        for o in d.get("obstacles", []):
            if o["kind"] == "polygon":
                obstacles.append(Polygon(tuple(tuple(v) for v in o["vertices"])))
            elif o["kind"] == "circle":
                obstacles.append(Circle(tuple(o["center"]), o["radius"]))
            else:
                raise GeometryError(f"unknown obstacle kind {o['kind']!r}")
        return cls(d["name"], float(d["width"]), float(d["height"]), tuple(obstacles))


def _segments_touch(p, q, a, b) -> bool:
    """Closed segments pq and ab share at least one point (within TOL)."""
    if (
        _point_segment_distance(p, a, b) <= TOL
        or _point_segment_distance(q, a, b) <= TOL
        or _point_segment_distance(a, p, q) <= TOL
        or _point_segment_distance(b, p, q) <= TOL
    ):
        return True
    d1 = _cross(q[0] - p[0], q[1] - p[1], a[0] - p[0], a[1] - p[1])
    d2 = _cross(q[0] - p[0], q[1] - p[1], b[0] - p[0], b[1] - p[1])
    d3 = _cross(b[0] - a[0], b[1] - a[1], p[0] - a[0], p[1] - a[1])
    d4 = _cross(b[0] - a[0], b[1] - a[1], q[0] - a[0], q[1] - a[1])
    return d1 * d2 < 0 and d3 * d4 < 0


def point_in_free_space(scenario: Scenario, p: Point2D) -> bool:
    x, y = p
    if not (math.isfinite(x) and math.isfinite(y)):
        return False
    if x < 0 or y < 0 or x > scenario.width or y > scenario.height:
        return False
    for ob in scenario.obstacles:
        if isinstance(ob, Circle):
            if math.hypot(x - ob.center[0], y - ob.center[1]) <= ob.radius + TOL:
                return False
        elif ob.contains(p) or ob.boundary_distance(p) <= TOL:
            return False
    return True


def _polygon_blocks(poly: Polygon, p: Point2D, q: Point2D) -> bool:
    rx, ry = q[0] - p[0], q[1] - p[1]
    length = math.hypot(rx, ry)
    if length <= TOL:
        return False
    ttol = TOL / length
    ts = [0.0, 1.0]
    for a, b in poly.edges:
        sx, sy = b[0] - a[0], b[1] - a[1]
        apx, apy = a[0] - p[0], a[1] - p[1]
        denom = _cross(rx, ry, sx, sy)
        if abs(denom) > 1e-12 * length * math.hypot(sx, sy):
            t = _cross(apx, apy, sx, sy) / denom
            u = _cross(apx, apy, rx, ry) / denom
            if -ttol <= t <= 1 + ttol and -1e-12 <= u <= 1 + 1e-12:
                ts.append(min(1.0, max(0.0, t)))
        elif abs(_cross(apx, apy, rx, ry)) <= TOL * length:
            # collinear edge: its endpoints split the segment
            for v in (a, b):
                t = ((v[0] - p[0]) * rx + (v[1] - p[1]) * ry) / (length * length)
                if 0.0 < t < 1.0:
                    ts.append(t)
    ts.sort()
    for t0, t1 in zip(ts, ts[1:]):
        if t1 - t0 <= ttol:
            continue
        tm = 0.5 * (t0 + t1)
        if poly.strictly_contains((p[0] + tm * rx, p[1] + tm * ry)):
            return True
    return False


def _circle_blocks(circle: Circle, p: Point2D, q: Point2D) -> bool:
    return _point_segment_distance(circle.center, p, q) < circle.radius - TOL


def segment_blocked(scenario: Scenario, p: Point2D, q: Point2D) -> bool:
    """True iff the open segment pq passes through the interior of an obstacle.

    Grazing a boundary (tangency, running along an edge, touching a vertex)
    does not block.
    """
    for end in (p, q):
        if not point_in_free_space(scenario, end):
            raise GeometryError("endpoint not in free space")
    for ob in scenario.obstacles:
        if isinstance(ob, Circle):
            if _circle_blocks(ob, p, q):
                return True
        elif _polygon_blocks(ob, p, q):
            return True
    return False


def _seg_point_dist_many(P, Q, C):
    """Distance from each point C[k] to each segment (P[m], Q[m]); shape (m, k)."""
    d = (Q - P)[:, None, :]
    w = C[None, :, :] - P[:, None, :]
    den = np.einsum("mij,mij->mi", d, d)
    den = np.where(den == 0.0, 1.0, den)
    t = np.clip(np.einsum("mkj,mij->mk", w, d) / den, 0.0, 1.0)
    diff = w - t[..., None] * d
    return np.hypot(diff[..., 0], diff[..., 1])


def blocked_many(scenario: Scenario, P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Vectorised :func:`segment_blocked` over rows of P and Q (both free-space).

    Generic configurations are decided by strict edge crossings; anything that
    touches a vertex or edge within a small margin is re-checked exactly.
    """
    P = np.asarray(P, dtype=float).reshape(-1, 2)
    Q = np.asarray(Q, dtype=float).reshape(-1, 2)
    out = np.zeros(len(P), dtype=bool)
    if len(P) == 0:
        return out
    for ob in scenario.obstacles:
        todo = ~out
        if not todo.any():
            break
        idx = np.nonzero(todo)[0]
        p, q = P[idx], Q[idx]
        x0, y0, x1, y1 = ob.bbox
        lo = np.minimum(p, q)
        hi = np.maximum(p, q)
        near = (hi[:, 0] >= x0) & (lo[:, 0] <= x1) & (hi[:, 1] >= y0) & (lo[:, 1] <= y1)
        if not near.any():
            continue
        idx, p, q = idx[near], p[near], q[near]
        if isinstance(ob, Circle):
            dist = _seg_point_dist_many(p, q, np.array([ob.center]))[:, 0]
            out[idx] = dist < ob.radius - TOL
            continue
        V = np.array(ob.vertices)
        A, B = V, np.roll(V, -1, axis=0)
        r = (q - p)[:, None, :]
        o1 = r[..., 0] * (A[None, :, 1] - p[:, None, 1]) - r[..., 1] * (A[None, :, 0] - p[:, None, 0])
        o2 = r[..., 0] * (B[None, :, 1] - p[:, None, 1]) - r[..., 1] * (B[None, :, 0] - p[:, None, 0])
        s = (B - A)[None, :, :]
        o3 = s[..., 0] * (p[:, None, 1] - A[None, :, 1]) - s[..., 1] * (p[:, None, 0] - A[None, :, 0])
        o4 = s[..., 0] * (q[:, None, 1] - A[None, :, 1]) - s[..., 1] * (q[:, None, 0] - A[None, :, 0])
        crossing = ((o1 * o2) < 0) & ((o3 * o4) < 0)
        hit = crossing.any(axis=1)
        vert_near = (_seg_point_dist_many(p, q, V) <= _DEGENERATE).any(axis=1)
        ends = _seg_point_dist_many(A, B, np.vstack([p, q])).min(axis=0)
        end_near = (ends[: len(p)] <= _DEGENERATE) | (ends[len(p):] <= _DEGENERATE)
        degenerate = vert_near | end_near
        for k in np.nonzero(degenerate)[0]:
            hit[k] = _polygon_blocks(ob, tuple(p[k]), tuple(q[k]))
        out[idx] = hit
    return out


def free_space_mask(scenario: Scenario, pts: np.ndarray) -> np.ndarray:
    """Vectorised :func:`point_in_free_space` for an (m, 2) array."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    x, y = pts[:, 0], pts[:, 1]
    ok = (x >= 0) & (y >= 0) & (x <= scenario.width) & (y <= scenario.height)
    for ob in scenario.obstacles:
        if isinstance(ob, Circle):
            ok &= np.hypot(x - ob.center[0], y - ob.center[1]) > ob.radius + TOL
            continue
        inside = np.zeros(len(pts), dtype=bool)
        mind = np.full(len(pts), np.inf)
        for (x0, y0), (x1, y1) in ob.edges:
            cond = (y0 > y) != (y1 > y)
            with np.errstate(divide="ignore", invalid="ignore"):
                xc = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
            inside ^= cond & (xc > x)
            dx, dy = x1 - x0, y1 - y0
            t = np.clip(((x - x0) * dx + (y - y0) * dy) / (dx * dx + dy * dy), 0, 1)
            mind = np.minimum(mind, np.hypot(x - x0 - t * dx, y - y0 - t * dy))
        ok &= ~inside & (mind > TOL)
    return ok


def convex_corner_vertices(scenario: Scenario) -> list[Point2D]:
    """Convex polygon vertices that are exposed, i.e. not lying on the area border."""
    out = []
    for poly in scenario.polygons:
        for v, convex in zip(poly.vertices, poly.convex_vertices()):
            on_border = (
                abs(v[0]) <= TOL
                or abs(v[1]) <= TOL
                or abs(v[0] - scenario.width) <= TOL
                or abs(v[1] - scenario.height) <= TOL
            )
            if convex and not on_border:
                out.append(v)
    return out


# --- scenario files -------------------------------------------------------


def load_scenario(path: Union[str, Path]) -> Scenario:
    with open(path) as fh:
        return Scenario.from_dict(json.load(fh))


def save_scenario(scenario: Scenario, path: Union[str, Path]) -> None:
    with open(path, "w") as fh:
        json.dump(scenario.to_dict(), fh, indent=2)
        fh.write("\n")


def canonical_name(name: str) -> str:
    key = name.strip().lower()
    return _ALIASES.get(key, key.replace("-", "_"))


def circular_scenario(diameter: float, width: float = 100.0, height: float = 100.0) -> Scenario:
    """A single circle of the given diameter centred in the area."""
    return Scenario(
        f"circular_d{diameter:g}",
        width,
        height,
        (Circle((width / 2, height / 2), diameter / 2),),
    )


def build_scenario(name: str, diameter: float | None = None) -> Scenario:
    """One of the bundled 100 m x 100 m scenarios, or ``"none"``.

    ``diameter`` overrides the circle size of the ``circular`` scenario.
    """
    key = canonical_name(name)
    if key == "none":
        return Scenario("none", 100.0, 100.0, ())
    if key not in CANONICAL_SCENARIOS:
        raise GeometryError(f"unknown scenario {name!r}")
    if key == "circular" and diameter is not None:
        return circular_scenario(diameter)
    text = resources.files("wsnloc").joinpath("scenarios", f"{key}.json").read_text()
    return Scenario.from_dict(json.loads(text))


def resolve_scenario(spec: str) -> Scenario:
    """Accept a canonical name, ``circular:<diameter>`` or a path to a scenario file."""
    if spec.lower().startswith("circular:"):
        return circular_scenario(float(spec.split(":", 1)[1]))
    p = Path(spec)
    if p.suffix == ".json" or p.exists():
        return load_scenario(p)
    return build_scenario(spec)


# --- ideal partition analytics -------------------------------------------


@dataclass(frozen=True)
class IdealStats:
    convex_corners: int | None  # None means infinitely many (curved boundary)
    ideal_seg_nodes: float
    ideal_pairs: frozenset
    ideal_subnets: frozenset


# Sub-network counts for the bundled layouts; they depend on how bisectors
# from neighbouring corners meet, which is not a function of corner count.
_IDEAL_SUBNETS = {
    "none": {1},
    "c_shape": {3},
    "s_shape": {5},
    "h_shape": {3},
    "rectangular": {4},
    "circular": {1, 2, 3},
    "asymmetric_multi_rectangular": {7},
    "maze": {7},
    "smiling_face": {4, 5},
}


def ideal_partition_stats(scenario: Scenario, L: float) -> IdealStats:
    if not L > 0:
        raise GeometryError("radio range must be positive")
    corners = len(convex_corner_vertices(scenario))
    circles = scenario.circles
    seg_nodes = 2.0 * corners + sum(2 * math.pi * c.radius / L for c in circles)
    if circles:
        pairs = {corners}
        for _ in circles:
            pairs = {p + k for p in pairs for k in (0, 1, 2)}
        if len(circles) == 2 and corners > 0:
            # symmetric twin circles resolve the same way
            pairs = {corners + 2 * k for k in (0, 1, 2)}
        convex: int | None = None
    else:
        pairs = {corners}
        convex = corners
    key = canonical_name(scenario.name)
    if key.startswith("circular"):
        key = "circular"
    subnets = _IDEAL_SUBNETS.get(key, {p + 1 for p in pairs})
    return IdealStats(convex, seg_nodes, frozenset(pairs), frozenset(subnets))


def polygon_area_free(scenario: Scenario) -> float:
    """Free area (deployment area minus obstacles); obstacles assumed disjoint."""
    area = scenario.width * scenario.height
    for ob in scenario.obstacles:
        if isinstance(ob, Circle):
            area -= math.pi * ob.radius ** 2
        else:
            area -= abs(ob.signed_area)
    return area
