"""Sampling-based waypoint planner over the C-space, with a grid A* baseline."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .geometry import ArenaMap, Point2, path_length, points_in_free_space, segment_clear

# Beam width for waypoint tuples beyond the exhaustively enumerated sizes.
BEAM_WIDTH = 64


class PlanningError(Exception):
    pass


class NoPathFound(PlanningError):
    pass


@dataclass(frozen=True)
class PlanConfig:
    sample_count: int = 30
    max_intermediates: int = 4

    def __post_init__(self):
        if self.sample_count < 1:
            raise PlanningError("sample_count must be >= 1")
        if self.max_intermediates < 0:
            raise PlanningError("max_intermediates must be >= 0")


@dataclass(frozen=True)
class Path:
    """Straight-line waypoint path: start, intermediates, goal."""

    waypoints: tuple
    intermediates: int
    length: float

    @classmethod
    def from_waypoints(cls, waypoints) -> "Path":
        pts = tuple(Point2(float(p[0]), float(p[1])) for p in waypoints)
        return cls(waypoints=pts, intermediates=len(pts) - 2, length=path_length(pts))

    def to_json(self) -> dict:
        return {
            "waypoints": [[p.x, p.y] for p in self.waypoints],
            "intermediates": self.intermediates,
            "length": round(self.length, 9),
        }


@dataclass(frozen=True)
class GridPath:
    """8-connected grid path for the A* comparison baseline."""

    cells: tuple
    resolution: float
    origin: tuple
    length: float

    @property
    def waypoints(self) -> tuple:
        ox, oy = self.origin
        return tuple(Point2(ox + (i + 0.5) * self.resolution, oy + (j + 0.5) * self.resolution)
                     for i, j in self.cells)


def sample_free_points(cspace: ArenaMap, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random points over the free space by bounding-box rejection."""
    x0, y0, x1, y1 = cspace.bbox
    out = np.empty((count, 2))
    filled = 0
    attempts = 0
    while filled < count:
        attempts += 1
        if attempts > 1000:
            raise PlanningError("free space too small to sample")
        batch = max(count - filled, 32) * 2
        cand = np.column_stack([rng.uniform(x0, x1, batch), rng.uniform(y0, y1, batch)])
        ok = cand[points_in_free_space(cand, cspace)]
        take = min(len(ok), count - filled)
        out[filled:filled + take] = ok[:take]
        filled += take
    return out


def _tuple_candidates(samples: np.ndarray, start, goal, i: int) -> list:
    """Ordered index tuples to try for i intermediate waypoints.

    Sizes 1 and 2 are enumerated exhaustively (exact minimality at the
    default sample count); larger sizes use a greedy beam seeded by
    distance to the start-goal segment.
    """
    n = len(samples)
    if i == 1:
        return [(k,) for k in range(n)]
    if i == 2:
        return [(a, b) for a in range(n) for b in range(n) if a != b]
    sx, sy = float(start[0]), float(start[1])
    gx, gy = float(goal[0]), float(goal[1])
    beams = [((), 0.0, (sx, sy))]
    for _ in range(i):
        grown = []
        for order, (tup, dist, last) in enumerate(beams):
            for k in range(n):
                if k in tup:
                    continue
                px, py = samples[k]
                d = dist + math.hypot(px - last[0], py - last[1])
                score = d + math.hypot(gx - px, gy - py)
                grown.append((score, tup + (k,), d, (px, py)))
        grown.sort(key=lambda item: (item[0], item[1]))
        beams = [(tup, d, last) for _, tup, d, last in grown[:BEAM_WIDTH]]
    return [tup for tup, _, _ in beams]


def plan_path(start, goal, cspace: ArenaMap, config: PlanConfig,
              rng: np.random.Generator) -> Path:
    """Shortest collision-free polyline using the fewest intermediate waypoints.

    Draws sample_count candidate waypoints, then tries i = 0, 1, 2, ...
    intermediates in order, returning the shortest feasible path at the first
    feasible i (fewer waypoints means fewer error-accumulating turns).
    """
    start = Point2(float(start[0]), float(start[1]))
    goal = Point2(float(goal[0]), float(goal[1]))
    for label, p in (("start", start), ("goal", goal)):
        if not points_in_free_space(np.array([p]), cspace)[0]:
            raise NoPathFound(f"{label} {tuple(p)} is not in free configuration space")
    if segment_clear(start, goal, cspace):
        return Path.from_waypoints([start, goal])
    samples = sample_free_points(cspace, config.sample_count, rng)
    reach_start = np.array([segment_clear(start, s, cspace) for s in samples])
    reach_goal = np.array([segment_clear(s, goal, cspace) for s in samples])
    for i in range(1, config.max_intermediates + 1):
        best = None
        for tup in _tuple_candidates(samples, start, goal, i):
            if not reach_start[tup[0]] or not reach_goal[tup[-1]]:
                continue
            if any(not segment_clear(samples[a], samples[b], cspace)
                   for a, b in zip(tup, tup[1:])):
                continue
            waypoints = [start] + [Point2(*samples[k]) for k in tup] + [goal]
            length = path_length(waypoints)
            key = (round(length, 9), tuple(map(tuple, waypoints)))
            if best is None or key < best[0]:
                best = (key, waypoints)
        if best is not None:
            return Path.from_waypoints(best[1])
    raise NoPathFound(
        f"no path with <= {config.max_intermediates} intermediates over "
        f"{config.sample_count} samples")


def astar_plan(start, goal, cspace: ArenaMap, resolution: float = 5.0) -> GridPath:
    """Optimal 8-connected grid path with Euclidean step costs and heuristic."""
    if resolution <= 0:
        raise PlanningError("grid resolution must be positive")
    x0, y0, x1, y1 = cspace.bbox
    nx = max(int(math.ceil((x1 - x0) / resolution)), 1)
    ny = max(int(math.ceil((y1 - y0) / resolution)), 1)
    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    centers = np.column_stack([
        x0 + (ii.ravel() + 0.5) * resolution,
        y0 + (jj.ravel() + 0.5) * resolution,
    ])
    free = points_in_free_space(centers, cspace).reshape(nx, ny)

    def cell_of(p) -> tuple:
        i = min(max(int((p[0] - x0) / resolution), 0), nx - 1)
        j = min(max(int((p[1] - y0) / resolution), 0), ny - 1)
        return i, j

    start_cell = cell_of(start)
    goal_cell = cell_of(goal)
    if not free[start_cell] or not free[goal_cell]:
        raise NoPathFound("start or goal cell is not free at this resolution")

    def heuristic(c) -> float:
        return resolution * math.hypot(c[0] - goal_cell[0], c[1] - goal_cell[1])

    g_cost = {start_cell: 0.0}
    parent = {start_cell: None}
    closed = set()
    h0 = heuristic(start_cell)
    heap = [(h0, h0, start_cell)]
    steps = [(di, dj, resolution * math.hypot(di, dj))
             for di in (-1, 0, 1) for dj in (-1, 0, 1) if (di, dj) != (0, 0)]
    while heap:
        f, h, cell = heapq.heappop(heap)
        if cell in closed:
            continue
        if cell == goal_cell:
            cells = []
            cur = cell
            while cur is not None:
                cells.append(cur)
                cur = parent[cur]
            cells.reverse()
            return GridPath(cells=tuple(cells), resolution=resolution,
                            origin=(x0, y0), length=g_cost[cell])
        closed.add(cell)
        ci, cj = cell
        for di, dj, cost in steps:
            ni, nj = ci + di, cj + dj
            if not (0 <= ni < nx and 0 <= nj < ny) or not free[ni, nj]:
                continue
            if di != 0 and dj != 0 and not (free[ci + di, cj] and free[ci, cj + dj]):
                continue  # no corner cutting past blocked orthogonals
            cand = g_cost[cell] + cost
            nxt = (ni, nj)
            if cand < g_cost.get(nxt, math.inf) - 1e-12:
                g_cost[nxt] = cand
                parent[nxt] = cell
                hn = heuristic(nxt)
                heapq.heappush(heap, (cand + hn, hn, nxt))
    raise NoPathFound("goal unreachable on the grid")


def turn_count(path) -> int:
    """Interior waypoints with a real heading change, after merging collinear runs."""
    wps = [np.array([p[0], p[1]], dtype=float) for p in path.waypoints]
    if len(wps) < 2:
        raise PlanningError("turn_count needs at least 2 waypoints")
    merged = [wps[0]]
    for p in wps[1:]:
        if np.linalg.norm(p - merged[-1]) > 1e-12:
            merged.append(p)
    count = 0
    for a, b, c in zip(merged, merged[1:], merged[2:]):
        h1 = math.atan2(b[1] - a[1], b[0] - a[0])
        h2 = math.atan2(c[1] - b[1], c[0] - b[0])
        if abs((h2 - h1 + math.pi) % (2.0 * math.pi) - math.pi) > 1e-6:
            count += 1
    return count
