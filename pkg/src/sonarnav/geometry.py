"""Polygonal arena maps, ray casting, collision predicates and C-space insetting."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, NamedTuple, Sequence

import numpy as np

# Absolute geometric tolerance (cm). Map scale is ~1e2, doubles give ample headroom.
TOL = 1e-9


class GeometryError(Exception):
    pass


class InvalidMapError(GeometryError):
    pass


class OriginOutsideFreeSpace(GeometryError):
    pass


class InsetDegenerate(GeometryError):
    pass


class TooFewWaypoints(GeometryError):
    pass


class Point2(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class Pose:
    """Planar position plus heading, heading normalized to [0, 2pi)."""

    position: Point2
    heading: float

    def __post_init__(self):
        x, y = self.position
        if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(self.heading)):
            raise GeometryError("pose coordinates must be finite")
        object.__setattr__(self, "position", Point2(float(x), float(y)))
        object.__setattr__(self, "heading", float(self.heading) % (2.0 * math.pi))


def wrap_to_pi(angle: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    return (float(angle) + math.pi) % (2.0 * math.pi) - math.pi


def _as_ring(vertices) -> np.ndarray:
    ring = np.asarray(vertices, dtype=float)
    if ring.ndim != 2 or ring.shape[1] != 2:
        raise InvalidMapError("polygon must be an (N, 2) vertex array")
    # tolerate an explicitly closed ring on input
    if len(ring) > 1 and np.allclose(ring[0], ring[-1], atol=TOL):
        ring = ring[:-1]
    return ring


def signed_area(ring: np.ndarray) -> float:
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _ring_edges(ring: np.ndarray) -> np.ndarray:
    """Edges of a closed ring as an (M, 4) array of x1, y1, x2, y2."""
    nxt = np.roll(ring, -1, axis=0)
    return np.hstack([ring, nxt])


def _segments_properly_intersect(p1, p2, q1, q2) -> bool:
    """True when the open interiors of the two segments cross."""
    d1 = (p2[0] - p1[0], p2[1] - p1[1])
    d2 = (q2[0] - q1[0], q2[1] - q1[1])
    denom = d1[0] * d2[1] - d1[1] * d2[0]
    if abs(denom) < TOL:
        return False
    qp = (q1[0] - p1[0], q1[1] - p1[1])
    t = (qp[0] * d2[1] - qp[1] * d2[0]) / denom
    u = (qp[0] * d1[1] - qp[1] * d1[0]) / denom
    eps = 1e-12
    return eps < t < 1.0 - eps and eps < u < 1.0 - eps


def _ring_self_intersections(ring: np.ndarray) -> list[tuple[int, int]]:
    n = len(ring)
    bad = []
    for i in range(n):
        a1, a2 = ring[i], ring[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue  # adjacent edges share a vertex by construction
            b1, b2 = ring[j], ring[(j + 1) % n]
            if _segments_properly_intersect(a1, a2, b1, b2):
                bad.append((i, j))
    return bad


def _point_in_ring(px: float, py: float, ring: np.ndarray) -> bool:
    """Even-odd crossing test, boundary not handled (callers apply tolerance)."""
    x, y = ring[:, 0], ring[:, 1]
    x2, y2 = np.roll(x, -1), np.roll(y, -1)
    cond = (y > py) != (y2 > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = np.where(cond, x + (py - y) / (y2 - y) * (x2 - x), np.inf)
    return bool(np.count_nonzero(cond & (px < xint)) % 2)


def validate_map_data(boundary, obstacles: Sequence = ()) -> list[str]:
    """Collect human-readable invariant violations for raw polygon data."""
    problems: list[str] = []
    try:
        b = _as_ring(boundary)
    except InvalidMapError as exc:
        return [f"boundary: {exc}"]
    if len(b) < 3:
        problems.append(f"boundary: needs >= 3 vertices, got {len(b)}")
        return problems
    if not np.isfinite(b).all():
        problems.append("boundary: non-finite vertex coordinates")
        return problems
    for i, j in _ring_self_intersections(b):
        problems.append(f"boundary: edges {i} and {j} intersect")
    if abs(signed_area(b)) < TOL:
        problems.append("boundary: degenerate (zero area)")

    rings = []
    for k, obs in enumerate(obstacles):
        try:
            ring = _as_ring(obs)
        except InvalidMapError as exc:
            problems.append(f"obstacle {k}: {exc}")
            continue
        if len(ring) < 3:
            problems.append(f"obstacle {k}: needs >= 3 vertices, got {len(ring)}")
            continue
        if not np.isfinite(ring).all():
            problems.append(f"obstacle {k}: non-finite vertex coordinates")
            continue
        for i, j in _ring_self_intersections(ring):
            problems.append(f"obstacle {k}: edges {i} and {j} intersect")
        for i, (px, py) in enumerate(ring):
            if not _point_in_ring(px, py, b) or _dist_to_ring(px, py, b) < 1e-6:
                problems.append(f"obstacle {k}: vertex {i} not strictly inside boundary")
        for i in range(len(ring)):
            a1, a2 = ring[i], ring[(i + 1) % len(ring)]
            for j in range(len(b)):
                if _segments_properly_intersect(a1, a2, b[j], b[(j + 1) % len(b)]):
                    problems.append(f"obstacle {k}: edge {i} crosses boundary edge {j}")
        rings.append((k, ring))
    for idx in range(len(rings)):
        for jdx in range(idx + 1, len(rings)):
            k1, r1 = rings[idx]
            k2, r2 = rings[jdx]
            crossed = any(
                _segments_properly_intersect(r1[i], r1[(i + 1) % len(r1)], r2[j], r2[(j + 1) % len(r2)])
                for i in range(len(r1))
                for j in range(len(r2))
            )
            contained = _point_in_ring(r2[0][0], r2[0][1], r1) or _point_in_ring(r1[0][0], r1[0][1], r2)
            if crossed or contained:
                problems.append(f"obstacles {k1} and {k2} are not disjoint")
    return problems


def _dist_to_ring(px: float, py: float, ring: np.ndarray) -> float:
    e = _ring_edges(ring)
    return float(np.min(_point_segment_distances(np.array([[px, py]]), e)))


def _point_segment_distances(points: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Distances from each point to each segment; shape (N, M)."""
    p = points[:, None, :]
    a = edges[None, :, 0:2]
    b = edges[None, :, 2:4]
    ab = b - a
    ap = p - a
    denom = np.einsum("...k,...k", ab, ab)
    t = np.clip(np.divide(np.einsum("...k,...k", ap, ab), denom, where=denom > 0.0,
                          out=np.zeros(np.broadcast_shapes(ap.shape[:-1], ab.shape[:-1]))), 0.0, 1.0)
    closest = a + t[..., None] * ab
    d = p - closest
    return np.sqrt(np.einsum("...k,...k", d, d))


def nearest_wall_directions(points: np.ndarray, arena: ArenaMap) -> np.ndarray:
    """Angle from each point toward the closest point on any map edge."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    p = points[:, None, :]
    a = arena.edges[None, :, 0:2]
    b = arena.edges[None, :, 2:4]
    ab = b - a
    ap = p - a
    denom = np.einsum("...k,...k", ab, ab)
    t = np.clip(np.divide(np.einsum("...k,...k", ap, ab), denom, where=denom > 0.0,
                          out=np.zeros(np.broadcast_shapes(ap.shape[:-1], ab.shape[:-1]))), 0.0, 1.0)
    closest = a + t[..., None] * ab
    d = closest - p
    dist = np.sqrt(np.einsum("...k,...k", d, d))
    idx = np.argmin(dist, axis=1)
    rows = np.arange(len(points))
    best = d[rows, idx]
    return np.arctan2(best[:, 1], best[:, 0]) % (2.0 * math.pi)


class ArenaMap:
    """Closed free space: a CCW boundary polygon minus CW obstacle polygons (cm)."""

    def __init__(self, boundary, obstacles: Iterable = (), *, validate: bool = True):
        boundary = _as_ring(boundary)
        obstacles = [_as_ring(o) for o in obstacles]
        if validate:
            problems = validate_map_data(boundary, obstacles)
            if problems:
                raise InvalidMapError("; ".join(problems))
        # normalize winding: boundary CCW, obstacles CW
        if signed_area(boundary) < 0:
            boundary = boundary[::-1].copy()
        obstacles = [o[::-1].copy() if signed_area(o) > 0 else o for o in obstacles]
        self.boundary = boundary
        self.obstacles = obstacles
        self.edges = np.vstack([_ring_edges(boundary)] + [_ring_edges(o) for o in obstacles])
        d = self.edges[:, 2:4] - self.edges[:, 0:2]
        self._edge_dirs = d / np.linalg.norm(d, axis=1, keepdims=True)
        lo = self.boundary.min(axis=0)
        hi = self.boundary.max(axis=0)
        self.bbox = (float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))

    # -- construction / serialization -------------------------------------

    @classmethod
    def from_json(cls, data: dict, *, validate: bool = True) -> "ArenaMap":
        if "boundary" not in data:
            raise InvalidMapError("map JSON must contain a 'boundary' key")
        return cls(data["boundary"], data.get("obstacles", []), validate=validate)

    @classmethod
    def from_file(cls, path, *, validate: bool = True) -> "ArenaMap":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh), validate=validate)

    def to_json(self) -> dict:
        return {
            "boundary": [[float(x), float(y)] for x, y in self.boundary],
            "obstacles": [[[float(x), float(y)] for x, y in o] for o in self.obstacles],
        }

    def edge_normal(self, edge_index: int) -> Point2:
        dx, dy = self._edge_dirs[edge_index]
        return Point2(-dy, dx)

    def free_area_bound(self) -> float:
        return abs(signed_area(self.boundary))


def segment_intersect(a1, a2, b1, b2) -> Point2 | None:
    """Intersection of two closed segments, nearest to a1; None when disjoint.

    Collinear overlaps return the overlap point nearest a1. Zero-length
    segments degrade to points.
    """
    ax, ay = float(a1[0]), float(a1[1])
    d1 = (float(a2[0]) - ax, float(a2[1]) - ay)
    bx, by = float(b1[0]), float(b1[1])
    d2 = (float(b2[0]) - bx, float(b2[1]) - by)
    denom = d1[0] * d2[1] - d1[1] * d2[0]
    qp = (bx - ax, by - ay)
    if abs(denom) < TOL:
        cross_qp = qp[0] * d1[1] - qp[1] * d1[0]
        len1sq = d1[0] ** 2 + d1[1] ** 2
        if len1sq < TOL * TOL:
            # a is a point: intersects iff it lies on segment b
            len2sq = d2[0] ** 2 + d2[1] ** 2
            if len2sq < TOL * TOL:
                return Point2(ax, ay) if abs(qp[0]) < TOL and abs(qp[1]) < TOL else None
            s = (-qp[0] * d2[0] - qp[1] * d2[1]) / len2sq
            if -TOL <= s <= 1.0 + TOL:
                px, py = bx + s * d2[0], by + s * d2[1]
                if abs(px - ax) < 1e-7 and abs(py - ay) < 1e-7:
                    return Point2(ax, ay)
            return None
        if abs(cross_qp) > 1e-7:
            return None  # parallel, not collinear
        # collinear: project b's endpoints onto a's parameter
        t0 = (qp[0] * d1[0] + qp[1] * d1[1]) / len1sq
        t1 = t0 + (d2[0] * d1[0] + d2[1] * d1[1]) / len1sq
        lo, hi = min(t0, t1), max(t0, t1)
        lo, hi = max(lo, 0.0), min(hi, 1.0)
        if lo > hi + TOL:
            return None
        t = max(lo, 0.0)
        return Point2(ax + t * d1[0], ay + t * d1[1])
    t = (qp[0] * d2[1] - qp[1] * d2[0]) / denom
    u = (qp[0] * d1[1] - qp[1] * d1[0]) / denom
    if -TOL <= t <= 1.0 + TOL and -TOL <= u <= 1.0 + TOL:
        return Point2(ax + t * d1[0], ay + t * d1[1])
    return None


def ray_cast_batch(origins: np.ndarray, angles: np.ndarray, arena: ArenaMap,
                   chunk: int = 65536) -> tuple[np.ndarray, np.ndarray]:
    """Distances and hit-edge indices for many rays at once.

    Rays with no hit (origin outside the closed map) get distance inf and
    edge index -1 rather than raising; scalar ray_cast handles the error.
    """
    origins = np.atleast_2d(np.asarray(origins, dtype=float))
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    n = len(angles)
    dist = np.full(n, np.inf)
    hit = np.full(n, -1, dtype=np.int64)
    e = arena.edges
    ax, ay = e[:, 0], e[:, 1]
    sx, sy = e[:, 2] - e[:, 0], e[:, 3] - e[:, 1]
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        ox = origins[lo:hi, 0:1]
        oy = origins[lo:hi, 1:2]
        dx = np.cos(angles[lo:hi])[:, None]
        dy = np.sin(angles[lo:hi])[:, None]
        denom = dx * sy - dy * sx
        apx = ax - ox
        apy = ay - oy
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (apx * sy - apy * sx) / denom
            u = (apx * dy - apy * dx) / denom
        ok = (np.abs(denom) > TOL) & (t >= -TOL) & (u >= -TOL) & (u <= 1.0 + TOL)
        t = np.where(ok, np.maximum(t, 0.0), np.inf)
        idx = np.argmin(t, axis=1)
        rows = np.arange(hi - lo)
        best = t[rows, idx]
        dist[lo:hi] = best
        hit[lo:hi] = np.where(np.isfinite(best), idx, -1)
    return dist, hit


def ray_cast(origin, angle: float, arena: ArenaMap) -> float:
    """Distance from an interior point to the nearest wall along a direction."""
    if not point_in_free_space(origin, arena):
        raise OriginOutsideFreeSpace(f"ray origin {tuple(origin)} is not in free space")
    d, _ = ray_cast_batch(np.array([[origin[0], origin[1]]]), np.array([angle]), arena)
    if not math.isfinite(d[0]):
        raise GeometryError("ray escaped the map; boundary is not closed")
    return float(d[0])


def points_in_free_space(points: np.ndarray, arena: ArenaMap) -> np.ndarray:
    """Vectorized free-space test; boundary points (within TOL) count as not free."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    px, py = points[:, 0:1], points[:, 1:2]

    def inside(ring: np.ndarray) -> np.ndarray:
        x, y = ring[:, 0], ring[:, 1]
        x2, y2 = np.roll(x, -1), np.roll(y, -1)
        cond = (y > py) != (y2 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x + (py - y) / (y2 - y) * (x2 - x)
        return np.count_nonzero(cond & (px < xint), axis=1) % 2 == 1

    free = inside(arena.boundary)
    for obs in arena.obstacles:
        free &= ~inside(obs)
    near = _point_segment_distances(points, arena.edges).min(axis=1) <= TOL
    return free & ~near


def point_in_free_space(p, arena: ArenaMap) -> bool:
    return bool(points_in_free_space(np.array([[p[0], p[1]]]), arena)[0])


def segment_clear(p1, p2, cspace: ArenaMap) -> bool:
    """True iff the open segment p1->p2 stays inside the free space of cspace."""
    a = np.array([float(p1[0]), float(p1[1])])
    b = np.array([float(p2[0]), float(p2[1])])
    mid = 0.5 * (a + b)
    probes = np.vstack([a, mid, b])
    if not points_in_free_space(probes, cspace).all():
        return False
    for e in cspace.edges:
        if _segments_properly_intersect(a, b, e[0:2], e[2:4]):
            return False
    return True


def path_length(waypoints) -> float:
    pts = np.asarray(waypoints, dtype=float)
    if pts.ndim != 2 or len(pts) < 2:
        raise TooFewWaypoints("path length needs at least 2 waypoints")
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


# -- configuration-space insetting -----------------------------------------


def _offset_ring(ring: np.ndarray, offset: float) -> np.ndarray:
    """Shift every edge 'offset' along its left normal, miter-joining corners.

    With the free space on the left of each directed edge (CCW boundary,
    CW holes), a positive offset erodes the free space.
    """
    n = len(ring)
    dirs = np.roll(ring, -1, axis=0) - ring
    lengths = np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs = dirs / lengths
    normals = np.stack([-dirs[:, 1], dirs[:, 0]], axis=1)
    out = np.empty_like(ring)
    for i in range(n):
        j = (i - 1) % n
        a = ring[j] + offset * normals[j]
        c = ring[i] + offset * normals[i]
        denom = dirs[j, 0] * dirs[i, 1] - dirs[j, 1] * dirs[i, 0]
        if abs(denom) < 1e-12:
            out[i] = c
        else:
            t = ((c[0] - a[0]) * dirs[i, 1] - (c[1] - a[1]) * dirs[i, 0]) / denom
            out[i] = a + t * dirs[j]
    return out


def _dedupe_ring(ring: np.ndarray) -> np.ndarray:
    keep = [0]
    for i in range(1, len(ring)):
        if np.linalg.norm(ring[i] - ring[keep[-1]]) > 1e-9:
            keep.append(i)
    if len(keep) > 1 and np.linalg.norm(ring[keep[-1]] - ring[keep[0]]) <= 1e-9:
        keep.pop()
    return ring[keep]


def _split_pinched_loops(ring: np.ndarray) -> list[np.ndarray]:
    """Split a self-intersecting ring at its first pinch point, recursively."""
    ring = _dedupe_ring(ring)
    n = len(ring)
    if n < 3:
        return []
    for i in range(n):
        a1, a2 = ring[i], ring[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            b1, b2 = ring[j], ring[(j + 1) % n]
            if _segments_properly_intersect(a1, a2, b1, b2):
                x = segment_intersect(a1, a2, b1, b2)
                px = np.array([x.x, x.y])
                loop1 = np.vstack([px, ring[i + 1:j + 1]])
                loop2 = np.vstack([px, ring[j + 1:], ring[:i + 1]])
                return _split_pinched_loops(loop1) + _split_pinched_loops(loop2)
    return [ring]


def inset_polygon(arena: ArenaMap, offset: float) -> ArenaMap:
    """Configuration-space map: free space eroded by 'offset' on every side.

    Edge offsetting with miter joins; corners are cut conservatively, so all
    surviving free points keep at least 'offset' clearance. Regions thinner
    than twice the offset may vanish; if everything does, InsetDegenerate.
    """
    if offset <= 0:
        raise GeometryError("inset offset must be positive")
    raw = _offset_ring(arena.boundary, offset)
    loops = _split_pinched_loops(raw)
    loops = [lp for lp in loops if signed_area(lp) > TOL and len(lp) >= 3]
    if not loops:
        raise InsetDegenerate(f"free space vanished for offset {offset}")
    new_boundary = max(loops, key=signed_area)

    new_obstacles = []
    for obs in arena.obstacles:
        grown = _offset_ring(obs, offset)  # CW hole: left normals point outward
        parts = _split_pinched_loops(grown)
        parts = [p for p in parts if signed_area(p) < -TOL and len(p) >= 3]
        if parts:
            new_obstacles.append(min(parts, key=signed_area))

    result = ArenaMap(new_boundary, new_obstacles, validate=False)
    # probe for any surviving free point; a coarse grid suffices at map scale
    x0, y0, x1, y1 = result.bbox
    gx, gy = np.meshgrid(np.linspace(x0, x1, 64), np.linspace(y0, y1, 64))
    probes = np.stack([gx.ravel(), gy.ravel()], axis=1)
    if not points_in_free_space(probes, result).any():
        raise InsetDegenerate(f"free space vanished for offset {offset}")
    return result


# -- bundled maps -----------------------------------------------------------


def bundled_map_names() -> list[str]:
    return ["mapa", "mapb", "mapc"]


def bundled_map(name: str) -> ArenaMap:
    """Load one of the maps shipped with the package (mapa, mapb, mapc)."""
    fname = f"{name.lower()}.json"
    ref = resources.files("sonarnav.maps").joinpath(fname)
    if not ref.is_file():
        raise InvalidMapError(f"no bundled map named {name!r}")
    return ArenaMap.from_json(json.loads(ref.read_text(encoding="utf-8")))
