"""Seeded cellular-automata obstacle courses.

Courses are grown on a coarse 30 x 30 grid (5 m square, walled), smoothed by a
birth rule on the 8-neighbourhood, then rasterised to a 0.05 m grid used for
raycasting, planning and collision. Maps whose start and goal are not joined
by a corridor wide enough for the robot are rejected and regenerated from
``seed ^ attempt``.

Randomness comes from :class:`XorShift64Star`, seeded through SplitMix64, so a
seed reproduces the same course in any language.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .geometry import Pose2D
from .grid import OccupancyGrid
from .planning import NoPathError, grid_dijkstra

MASK64 = (1 << 64) - 1
_EIGHT = np.ones((3, 3), dtype=bool)


class GenerationError(RuntimeError):
    pass


class XorShift64Star:
    """xorshift64* (Vigna 2014) with the state initialised by one SplitMix64 step."""

    def __init__(self, seed: int):
        z = (int(seed) + 0x9E3779B97F4A7C15) & MASK64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        z ^= z >> 31
        self.state = z or 0x9E3779B97F4A7C15

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & MASK64

    def random(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def gauss(self) -> float:
        """Standard normal via Box-Muller (one value per call)."""
        u1 = 1.0 - self.random()
        u2 = self.random()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


@dataclass(frozen=True)
class CAParams:
    size_cells: int = 30
    side_m: float = 5.0
    fill_prob: float = 0.35
    iterations: int = 3
    threshold: int = 5
    fine_resolution: float = 0.05
    # start/goal placement and passability, metres from the nearest obstacle edge
    band_depth: float = 0.85
    start_clearance: float = 0.40
    passage_clearance: float = 0.35
    max_retries: int = 100

    def __post_init__(self):
        if not 0.0 < self.fill_prob < 1.0:
            raise ValueError("fill_prob must lie in (0, 1)")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not 0 <= self.threshold <= 8:
            raise ValueError("threshold must lie in [0, 8]")
        if self.size_cells < 3:
            raise ValueError("size_cells must be >= 3")

    @property
    def cell_size(self) -> float:
        return self.side_m / self.size_cells


# denser, closer to the look of the public BARN worlds
DENSE = CAParams(fill_prob=0.5)


@dataclass(eq=False)
class EnvSpec:
    grid: OccupancyGrid
    start: Pose2D
    goal: tuple[float, float]
    path_length: float
    difficulty_seed: int
    attempt: int = 0

    def __eq__(self, other):
        if not isinstance(other, EnvSpec):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.start == other.start
            and self.goal == other.goal
            and self.path_length == other.path_length
            and self.difficulty_seed == other.difficulty_seed
            and self.attempt == other.attempt
        )

    def save(self, stem: str | Path) -> tuple[Path, Path]:
        stem = Path(stem)
        map_path = stem.with_suffix(".map")
        meta_path = stem.with_suffix(".meta")
        save_map(self.grid, map_path)
        save_meta(self, meta_path)
        return map_path, meta_path

    @classmethod
    def load(cls, stem: str | Path) -> "EnvSpec":
        stem = Path(stem)
        grid = load_map(stem.with_suffix(".map"))
        meta = read_keyvalue(stem.with_suffix(".meta"))
        return cls(
            grid=grid,
            start=Pose2D(float(meta["start_x"]), float(meta["start_y"]), float(meta["start_theta"])),
            goal=(float(meta["goal_x"]), float(meta["goal_y"])),
            path_length=float(meta["path_length"]),
            difficulty_seed=int(meta["seed"]),
            attempt=int(meta.get("attempt", 0)),
        )


def smooth_step(grid: OccupancyGrid, threshold: int) -> OccupancyGrid:
    """One CA pass: an interior cell is occupied iff >= ``threshold`` of its 8 neighbours are.

    The cell itself is not counted; the outer ring stays occupied.
    """
    if not 0 <= threshold <= 8:
        raise ValueError("threshold must lie in [0, 8]")
    cells = grid.cells
    h, w = cells.shape
    padded = np.pad(cells.astype(np.int8), 1, constant_values=1)
    count = np.zeros((h, w), dtype=np.int8)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr or dc:
                count += padded[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w]
    out = count >= threshold
    _wall(out)
    return OccupancyGrid(out, grid.resolution, grid.origin)


def _wall(cells: np.ndarray) -> None:
    cells[0, :] = cells[-1, :] = True
    cells[:, 0] = cells[:, -1] = True


def random_fill(rng: XorShift64Star, params: CAParams) -> OccupancyGrid:
    n = params.size_cells
    cells = np.ones((n, n), dtype=bool)
    for r in range(1, n - 1):
        for c in range(1, n - 1):
            cells[r, c] = rng.random() < params.fill_prob
    return OccupancyGrid(cells, params.cell_size)


def rasterize(coarse: OccupancyGrid, fine_resolution: float) -> OccupancyGrid:
    """Resample onto a finer grid by cell-centre lookup."""
    xmin, ymin, xmax, ymax = coarse.extent
    w = int(round((xmax - xmin) / fine_resolution))
    h = int(round((ymax - ymin) / fine_resolution))
    cx = (np.arange(w) + 0.5) * fine_resolution
    cy = (np.arange(h) + 0.5) * fine_resolution
    cols = np.minimum((cx / coarse.resolution).astype(np.int64), coarse.width_cells - 1)
    rows = np.minimum((cy / coarse.resolution).astype(np.int64), coarse.height_cells - 1)
    return OccupancyGrid(coarse.cells[np.ix_(rows, cols)], fine_resolution, coarse.origin)


def clearance_map(grid: OccupancyGrid) -> np.ndarray:
    """Approximate distance [m] from each free cell centre to the nearest occupied cell edge."""
    d = ndimage.distance_transform_edt(~grid.cells) * grid.resolution
    return np.where(grid.cells, 0.0, d - 0.5 * grid.resolution)


def _band_anchor(mask: np.ndarray) -> tuple[int, int] | None:
    """Cell nearest the centroid of the largest 8-connected component of ``mask``."""
    labels, n = ndimage.label(mask, structure=_EIGHT)
    if n == 0:
        return None
    sizes = np.bincount(labels.ravel())[1:]
    best = int(np.argmax(sizes)) + 1  # first largest in raster order
    rows, cols = np.nonzero(labels == best)
    cr, cc = rows.mean(), cols.mean()
    d2 = (rows - cr) ** 2 + (cols - cc) ** 2
    i = int(np.argmin(d2))
    return int(rows[i]), int(cols[i])


def place_start_goal(grid: OccupancyGrid, params: CAParams):
    """Start in the bottom band, goal in the top band; None if either band has no room."""
    clear = clearance_map(grid)
    res = grid.resolution
    ys = grid.origin[1] + (np.arange(grid.height_cells) + 0.5) * res
    wall = params.cell_size
    lo = grid.origin[1] + wall
    hi = grid.origin[1] + grid.height_cells * res - wall
    ok = clear >= params.start_clearance
    bottom = ok & ((ys > lo) & (ys <= lo + params.band_depth))[:, None]
    top = ok & ((ys < hi) & (ys >= hi - params.band_depth))[:, None]
    s = _band_anchor(bottom)
    g = _band_anchor(top)
    if s is None or g is None:
        return None
    return s, g, clear


def optimal_path_length(grid: OccupancyGrid, start, goal) -> float:
    """Shortest 8-connected free-cell path length [m] between the cells holding ``start`` and ``goal``."""
    s = grid.world_to_cell(start[0], start[1])
    g = grid.world_to_cell(goal[0], goal[1])
    cost, _ = grid_dijkstra(~grid.cells, s, g, grid.resolution)
    return cost


def generate_environment(seed: int, params: CAParams = CAParams()) -> EnvSpec:
    for attempt in range(params.max_retries):
        rng = XorShift64Star(seed ^ attempt)
        coarse = random_fill(rng, params)
        for _ in range(params.iterations):
            coarse = smooth_step(coarse, params.threshold)
        grid = rasterize(coarse, params.fine_resolution)
        placed = place_start_goal(grid, params)
        if placed is None:
            continue
        (sr, sc), (gr, gc), clear = placed
        labels, _ = ndimage.label(clear >= params.passage_clearance, structure=_EIGHT)
        if labels[sr, sc] == 0 or labels[sr, sc] != labels[gr, gc]:
            continue
        start_xy = grid.cell_center(sr, sc)
        goal_xy = grid.cell_center(gr, gc)
        try:
            length = optimal_path_length(grid, start_xy, goal_xy)
        except NoPathError:  # pragma: no cover - implied by the passability check
            continue
        return EnvSpec(grid, Pose2D(start_xy[0], start_xy[1], math.pi / 2), goal_xy, length, seed, attempt)
    raise GenerationError(f"seed {seed}: no connected course after {params.max_retries} attempts")


# --- file formats ---------------------------------------------------------


def save_map(grid: OccupancyGrid, path: str | Path) -> None:
    """Four header lines, then one text row per grid row, top (max y) first."""
    lines = [
        str(grid.width_cells),
        str(grid.height_cells),
        repr(grid.resolution),
        f"origin {grid.origin[0]!r} {grid.origin[1]!r}",
    ]
    for row in grid.cells[::-1]:
        lines.append("".join("#" if c else "." for c in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_map(path: str | Path) -> OccupancyGrid:
    lines = Path(path).read_text(encoding="ascii").splitlines()
    w, h = int(lines[0]), int(lines[1])
    res = float(lines[2])
    tag, ox, oy = lines[3].split()
    if tag != "origin":
        raise ValueError(f"{path}: bad origin line {lines[3]!r}")
    rows = lines[4 : 4 + h]
    if len(rows) != h or any(len(r) != w for r in rows):
        raise ValueError(f"{path}: expected {h} rows of {w} cells")
    cells = np.array([[ch == "#" for ch in r] for r in rows[::-1]], dtype=bool)
    return OccupancyGrid(cells, res, (float(ox), float(oy)))


def write_keyvalue(path: str | Path, items: dict) -> None:
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in items.items()), encoding="utf-8")


def read_keyvalue(path: str | Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def save_meta(env: EnvSpec, path: str | Path) -> None:
    write_keyvalue(
        path,
        {
            "start_x": repr(env.start.x),
            "start_y": repr(env.start.y),
            "start_theta": repr(env.start.theta),
            "goal_x": repr(env.goal[0]),
            "goal_y": repr(env.goal[1]),
            "path_length": repr(env.path_length),
            "seed": env.difficulty_seed,
            "attempt": env.attempt,
        },
    )
