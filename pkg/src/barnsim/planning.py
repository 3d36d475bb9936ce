"""Inflated costmaps, grid Dijkstra and sub-goal extraction."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numba
import numpy as np
from scipy import ndimage

from .geometry import Pose2D
from .grid import OccupancyGrid

LETHAL = 254.0
MAX_NONLETHAL = 253.0

DEFAULT_INFLATION_RADIUS = 0.25
DEFAULT_COST_WEIGHT = 0.5
# radii tried in order when the nominal inflation seals a passage
FALLBACK_RADII = (0.25, 0.15, 0.05, 0.0)
# soft cost band kept beyond the hard keep-out of each fallback stage
COST_BAND = 0.25
# start/goal neighbourhood exempt from the keep-out so a robot near a wall can leave
KEEP_OUT_EXEMPT = 0.35


class NoPathError(RuntimeError):
    pass


def linear_decay(d: np.ndarray, radius: float) -> np.ndarray:
    """253 next to the obstacle, falling linearly to 0 at ``radius``."""
    out = np.zeros(np.shape(d))
    inside = d < radius
    out[inside] = MAX_NONLETHAL * (1.0 - d[inside] / radius)
    return out


@dataclass(eq=False)
class Costmap:
    grid: OccupancyGrid
    cost: np.ndarray
    inflation_radius: float
    memory: bool = False

    @property
    def lethal(self) -> np.ndarray:
        return self.cost >= LETHAL

    def lethal_grid(self) -> OccupancyGrid:
        return OccupancyGrid(self.lethal, self.grid.resolution, self.grid.origin)


def obstacle_distance(occupied: np.ndarray, resolution: float) -> np.ndarray:
    """Distance [m] from each cell centre to the nearest occupied cell centre (inf if none)."""
    if not occupied.any():
        return np.full(occupied.shape, np.inf)
    return ndimage.distance_transform_edt(~occupied) * resolution


def inflate(
    grid: OccupancyGrid,
    radius: float = DEFAULT_INFLATION_RADIUS,
    decay: Callable[[np.ndarray, float], np.ndarray] = linear_decay,
    memory: bool = False,
) -> Costmap:
    if radius < 0:
        raise ValueError("radius must be >= 0")
    cost = np.zeros(grid.cells.shape)
    if radius > 0:
        d = obstacle_distance(grid.cells, grid.resolution)
        cost = np.clip(decay(d, radius), 0.0, MAX_NONLETHAL)
    cost[grid.cells] = LETHAL
    return Costmap(grid, cost, radius, memory)


class MemoryCostmap:
    """Obstacle memory built from scans; lethal cells persist once observed."""

    def __init__(self, like: OccupancyGrid):
        self.grid = OccupancyGrid(np.zeros_like(like.cells), like.resolution, like.origin)
        self._cache: dict[float, Costmap] = {}

    def observe_points(self, points: np.ndarray) -> int:
        """Mark the cells containing ``points`` (world frame) as occupied; returns newly marked count."""
        if len(points) == 0:
            return 0
        g = self.grid
        cols = np.floor((points[:, 0] - g.origin[0]) / g.resolution).astype(np.int64)
        rows = np.floor((points[:, 1] - g.origin[1]) / g.resolution).astype(np.int64)
        ok = (rows >= 0) & (rows < g.height_cells) & (cols >= 0) & (cols < g.width_cells)
        rows, cols = rows[ok], cols[ok]
        new = ~g.cells[rows, cols]
        if not new.any():
            return 0
        g.cells[rows[new], cols[new]] = True
        self._cache.clear()
        return int(np.unique(rows[new] * g.width_cells + cols[new]).size)

    def observe_scan(self, scan, robot_pose, nudge: float = 1e-6) -> int:
        """Mark the cells hit by ``scan``.

        Ranges end on the entry face of the hit cell, so each endpoint is pushed
        ``nudge`` metres further along its beam to land inside that cell.
        """
        hit = scan.ranges < scan.config.max_range
        if not hit.any():
            return 0
        sp = scan.sensor_pose(robot_pose)
        a = scan.config.angles()[hit] + sp.theta
        r = scan.ranges[hit] + nudge
        return self.observe_points(np.column_stack([sp.x + r * np.cos(a), sp.y + r * np.sin(a)]))

    def costmap(self, radius: float = DEFAULT_INFLATION_RADIUS) -> Costmap:
        cm = self._cache.get(radius)
        if cm is None:
            cm = inflate(self.grid, radius, memory=True)
            self._cache[radius] = cm
        return cm


@dataclass(eq=False)
class PlannedPath:
    waypoints: np.ndarray
    cost: float = 0.0

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=float).reshape(-1, 2)
        if len(self.waypoints) == 0:
            raise ValueError("empty path")

    @property
    def total_length(self) -> float:
        return float(np.sum(np.hypot(*np.diff(self.waypoints, axis=0).T))) if len(self.waypoints) > 1 else 0.0

    def __len__(self):
        return len(self.waypoints)


_NEIGHBORS = np.array(
    [[-1, -1], [-1, 0], [-1, 1], [0, -1], [0, 1], [1, -1], [1, 0], [1, 1]], dtype=np.int64
)


@numba.njit(cache=True)
def _dijkstra(passable, cellcost, weight, res, sr, sc, gr, gc, nbrs):
    h, w = passable.shape
    dist = np.full((h, w), np.inf)
    parent = np.full((h, w), -1, dtype=np.int64)
    done = np.zeros((h, w), dtype=np.bool_)
    dist[sr, sc] = 0.0
    heap = [(0.0, sr, sc)]
    diag = math.sqrt(2.0) * res
    while len(heap) > 0:
        d, r, c = heapq.heappop(heap)
        if done[r, c]:
            continue
        done[r, c] = True
        if r == gr and c == gc:
            break
        for k in range(8):
            nr = r + nbrs[k, 0]
            nc = c + nbrs[k, 1]
            if nr < 0 or nc < 0 or nr >= h or nc >= w:
                continue
            if not passable[nr, nc] or done[nr, nc]:
                continue
            step = diag if (nbrs[k, 0] != 0 and nbrs[k, 1] != 0) else res
            nd = d + step * (1.0 + weight * cellcost[nr, nc])
            if nd < dist[nr, nc]:
                dist[nr, nc] = nd
                parent[nr, nc] = r * w + c
                heapq.heappush(heap, (nd, nr, nc))
    return dist, parent


def grid_dijkstra(
    passable: np.ndarray,
    start: tuple[int, int],
    goal: tuple[int, int],
    resolution: float,
    cellcost: np.ndarray | None = None,
    weight: float = 0.0,
) -> tuple[float, list[tuple[int, int]]]:
    """Minimal-cost 8-connected cell path; raises :class:`NoPathError`.

    Step cost is step length times ``1 + weight * cellcost[destination]``.
    Ties are broken lexicographically on (cost, row, col).
    """
    passable = np.ascontiguousarray(passable, dtype=np.bool_)
    if cellcost is None:
        cellcost = np.zeros(passable.shape)
    sr, sc = start
    gr, gc = goal
    h, w = passable.shape
    for r, c, name in ((sr, sc, "start"), (gr, gc, "goal")):
        if not (0 <= r < h and 0 <= c < w) or not passable[r, c]:
            raise NoPathError(f"{name} cell {(r, c)} is blocked or outside the grid")
    dist, parent = _dijkstra(
        passable, np.ascontiguousarray(cellcost, dtype=np.float64), float(weight), float(resolution), sr, sc, gr, gc, _NEIGHBORS
    )
    if not np.isfinite(dist[gr, gc]):
        raise NoPathError(f"goal {(gr, gc)} unreachable from {(sr, sc)}")
    cells = [(gr, gc)]
    idx = parent[gr, gc]
    while idx >= 0:
        cells.append((int(idx // w), int(idx % w)))
        idx = parent[cells[-1]]
    cells.reverse()
    return float(dist[gr, gc]), cells


def plan(
    costmap: Costmap,
    start: Sequence[float],
    goal: Sequence[float],
    weight: float = DEFAULT_COST_WEIGHT,
    clearance: float = 0.0,
) -> PlannedPath:
    """Cheapest path over non-lethal cells.

    ``clearance`` > 0 also forbids cells whose centre lies closer than that to
    an obstacle centre, except within ``KEEP_OUT_EXEMPT`` of start and goal.
    """
    g = costmap.grid
    s = g.world_to_cell(*start)
    e = g.world_to_cell(*goal)
    passable = ~costmap.lethal
    if clearance > 0:
        rows, cols = np.indices(passable.shape)
        cx = g.origin[0] + (cols + 0.5) * g.resolution
        cy = g.origin[1] + (rows + 0.5) * g.resolution
        near = np.zeros(passable.shape, dtype=bool)
        for px, py in (start, goal):
            near |= np.hypot(cx - px, cy - py) <= KEEP_OUT_EXEMPT
        passable &= (obstacle_distance(g.cells, g.resolution) >= clearance) | near
    cost, cells = grid_dijkstra(passable, s, e, g.resolution, costmap.cost, weight)
    return PlannedPath(np.array([g.cell_center(r, c) for r, c in cells]), cost)


def plan_with_fallback(
    memory: MemoryCostmap,
    start: Sequence[float],
    goal: Sequence[float],
    radii: Sequence[float] = FALLBACK_RADII,
    weight: float = DEFAULT_COST_WEIGHT,
    cost_band: float = COST_BAND,
) -> tuple[PlannedPath, float]:
    """Plan with the largest inflation radius that still leaves a path.

    Each radius acts as a hard keep-out around remembered obstacles, with the
    linear cost decaying over a further ``cost_band``; large radii therefore
    seal narrow passages and the search retries with the next smaller one.
    """
    err = None
    for radius in radii:
        try:
            return plan(memory.costmap(radius + cost_band), start, goal, weight, clearance=radius), radius
        except NoPathError as exc:
            err = exc
    raise NoPathError(str(err))


def project_onto_path(waypoints: np.ndarray, x: float, y: float) -> tuple[float, float]:
    """(arc length, distance) of the closest point on the polyline; earliest arc length wins ties."""
    if len(waypoints) == 1:
        return 0.0, math.hypot(x - waypoints[0, 0], y - waypoints[0, 1])
    a = waypoints[:-1]
    d = np.diff(waypoints, axis=0)
    seg_len2 = np.einsum("ij,ij->i", d, d)
    rel = np.array([x, y]) - a
    t = np.where(seg_len2 > 0, np.einsum("ij,ij->i", rel, d) / np.where(seg_len2 > 0, seg_len2, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    closest = a + t[:, None] * d
    dist = np.hypot(closest[:, 0] - x, closest[:, 1] - y)
    i = int(np.argmin(dist))  # first minimum
    seg_len = np.sqrt(seg_len2)
    s0 = float(np.sum(seg_len[:i]))
    return s0 + float(t[i] * seg_len[i]), float(dist[i])


def point_at_arclength(waypoints: np.ndarray, s: float) -> np.ndarray:
    if len(waypoints) == 1 or s <= 0:
        return waypoints[0].copy()
    seg_len = np.hypot(*np.diff(waypoints, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    if s >= cum[-1]:
        return waypoints[-1].copy()
    i = int(np.searchsorted(cum, s, side="right")) - 1
    t = (s - cum[i]) / seg_len[i] if seg_len[i] > 0 else 0.0
    return waypoints[i] + t * (waypoints[i + 1] - waypoints[i])


def subgoal(path: PlannedPath, robot_pose: Pose2D, lookahead: float = 0.5) -> np.ndarray:
    """Point ``lookahead`` metres of arc length past the robot's projection onto the path."""
    s, _ = project_onto_path(path.waypoints, robot_pose.x, robot_pose.y)
    return point_at_arclength(path.waypoints, s + lookahead)
