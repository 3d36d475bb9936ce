"""Planar poses, unicycle kinematics and footprint collision tests."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .grid import OccupancyGrid

MAX_SPEED = 2.0  # [m/s] platform limit

# Clearpath Jackal outer dimensions [m]
JACKAL_LENGTH = 0.508
JACKAL_WIDTH = 0.430


def normalize_angle(a: float) -> float:
    """Wrap to (-pi, pi]; -pi maps to +pi."""
    r = math.remainder(a, 2.0 * math.pi)
    if r <= -math.pi:
        r = math.pi
    return r


def _sinc(a: float) -> float:
    if abs(a) < 1e-4:
        a2 = a * a
        return 1.0 - a2 / 6.0 + a2 * a2 / 120.0
    return math.sin(a) / a


@dataclass(frozen=True)
class Pose2D:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))

    def compose(self, other: "Pose2D") -> "Pose2D":
        """self * other: express ``other`` (given in this frame) in the parent frame."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2D(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )

    def to_local(self, x: float, y: float) -> tuple[float, float]:
        """World point -> this frame."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        dx, dy = x - self.x, y - self.y
        return c * dx + s * dy, -s * dx + c * dy

    def to_world(self, x: float, y: float) -> tuple[float, float]:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return self.x + c * x - s * y, self.y + s * x + c * y

    def distance_to(self, x: float, y: float) -> float:
        return math.hypot(x - self.x, y - self.y)


@dataclass(frozen=True)
class Twist:
    v: float = 0.0
    omega: float = 0.0

    @property
    def curvature(self) -> float:
        if self.v == 0.0:
            raise ZeroDivisionError("curvature undefined for v == 0")
        return self.omega / self.v

    def clamped(self, max_speed: float, max_omega: float = math.inf) -> "Twist":
        return Twist(
            min(max(self.v, -max_speed), max_speed),
            min(max(self.omega, -max_omega), max_omega),
        )


@dataclass(frozen=True)
class RobotState:
    pose: Pose2D = field(default_factory=Pose2D)
    twist: Twist = field(default_factory=Twist)


def integrate_unicycle(state: RobotState, cmd: Twist, dt: float, max_speed: float = MAX_SPEED) -> RobotState:
    """Closed-form arc integration of a constant twist over ``dt``.

    The command is clamped to ``max_speed``; the returned state carries the
    twist actually applied, so callers can detect clamping by comparing it with
    ``cmd``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    cmd = cmd.clamped(max_speed)
    p = state.pose
    a = cmd.omega * dt
    half = 0.5 * a
    chord = cmd.v * dt * _sinc(half)
    heading = p.theta + half
    return RobotState(
        Pose2D(p.x + chord * math.cos(heading), p.y + chord * math.sin(heading), p.theta + a),
        cmd,
    )


def arc_endpoint(v: float, kappa: float, t: float) -> Pose2D:
    """Pose reached from the origin after following curvature ``kappa`` at speed ``v`` for ``t``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    s = v * t
    a = kappa * s
    half = 0.5 * a
    chord = s * _sinc(half)
    return Pose2D(chord * math.cos(half), chord * math.sin(half), a)


def arc_poses(v: float, kappa: float, times: np.ndarray) -> np.ndarray:
    """Vectorised :func:`arc_endpoint`; returns (n, 3) of x, y, heading (heading not wrapped)."""
    s = v * np.asarray(times, dtype=float)
    a = kappa * s
    half = 0.5 * a
    small = np.abs(half) < 1e-4
    safe = np.where(small, 1.0, half)
    sinc = np.where(small, 1.0 - half**2 / 6.0 + half**4 / 120.0, np.sin(safe) / safe)
    chord = s * sinc
    return np.column_stack([chord * np.cos(half), chord * np.sin(half), a])


# --- polygons -------------------------------------------------------------


def polygon_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def is_convex(poly: np.ndarray) -> bool:
    d = np.roll(poly, -1, axis=0) - poly
    cross = d[:, 0] * np.roll(d[:, 1], -1) - d[:, 1] * np.roll(d[:, 0], -1)
    return bool(np.all(cross > 0) or np.all(cross < 0))


def inflate_polygon(poly: np.ndarray, margin: float) -> np.ndarray:
    """Mitred outward offset of a CCW convex polygon.

    Every edge moves out by ``margin``; the result contains the Minkowski sum
    with a disc of radius ``margin``.
    """
    if margin == 0:
        return poly.copy()
    n = len(poly)
    d = np.roll(poly, -1, axis=0) - poly
    normals = np.column_stack([d[:, 1], -d[:, 0]]) / np.linalg.norm(d, axis=1)[:, None]
    out = np.empty_like(poly)
    for i in range(n):
        # vertex i joins edge i-1 and edge i
        n0, n1 = normals[i - 1], normals[i]
        p0 = poly[i] + margin * n0
        p1 = poly[i] + margin * n1
        t0 = d[i - 1]
        t1 = d[i]
        m = np.array([[t0[0], -t1[0]], [t0[1], -t1[1]]])
        det = np.linalg.det(m)
        if abs(det) < 1e-12:
            out[i] = p1
            continue
        ab = np.linalg.solve(m, p1 - p0)
        out[i] = p0 + ab[0] * t0
    return out


def transform_points(points: np.ndarray, pose: Pose2D) -> np.ndarray:
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    rot = np.array([[c, -s], [s, c]])
    return points @ rot.T + np.array([pose.x, pose.y])


def points_in_convex_polygon(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Boolean mask of points inside or on a CCW convex polygon."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    a = poly
    b = np.roll(poly, -1, axis=0)
    e = b - a
    rel = points[:, None, :] - a[None, :, :]
    cross = e[None, :, 0] * rel[:, :, 1] - e[None, :, 1] * rel[:, :, 0]
    return np.all(cross >= 0.0, axis=1)


@dataclass(frozen=True, eq=False)
class Footprint:
    """Convex robot outline in the robot frame (CCW, contains the origin)."""

    polygon: np.ndarray
    inflation_margin: float = 0.0

    def __post_init__(self):
        poly = np.array(self.polygon, dtype=float).reshape(-1, 2)
        if len(poly) < 3:
            raise ValueError("footprint needs at least 3 vertices")
        if polygon_area(poly) < 0:
            poly = poly[::-1].copy()
        if not is_convex(poly):
            raise ValueError("footprint must be convex")
        if not points_in_convex_polygon(np.zeros((1, 2)), poly)[0]:
            raise ValueError("footprint must contain the robot origin")
        if self.inflation_margin < 0:
            raise ValueError("inflation_margin must be >= 0")
        poly.setflags(write=False)
        object.__setattr__(self, "polygon", poly)

    @classmethod
    def rectangle(cls, length: float = JACKAL_LENGTH, width: float = JACKAL_WIDTH, inflation_margin: float = 0.0):
        hx, hy = 0.5 * length, 0.5 * width
        return cls(np.array([[hx, hy], [-hx, hy], [-hx, -hy], [hx, -hy]]), inflation_margin)

    def inflated(self, margin: float | None = None) -> np.ndarray:
        return inflate_polygon(self.polygon, self.inflation_margin if margin is None else margin)

    def with_margin(self, margin: float) -> "Footprint":
        return Footprint(self.polygon, margin)

    @property
    def length(self) -> float:
        return float(np.ptp(self.polygon[:, 0]))

    @property
    def width(self) -> float:
        return float(np.ptp(self.polygon[:, 1]))

    @property
    def circumscribed_radius(self) -> float:
        return float(np.max(np.hypot(self.polygon[:, 0], self.polygon[:, 1])))

    def __eq__(self, other):
        if not isinstance(other, Footprint):
            return NotImplemented
        return self.inflation_margin == other.inflation_margin and np.array_equal(self.polygon, other.polygon)

    def __hash__(self):
        return hash((self.polygon.tobytes(), self.inflation_margin))


@numba.njit(cache=True)
def _polygon_hits_cells(cells, res, ox, oy, poly):
    h, w = cells.shape
    n = poly.shape[0]
    pxmin = poly[:, 0].min()
    pxmax = poly[:, 0].max()
    pymin = poly[:, 1].min()
    pymax = poly[:, 1].max()
    c0 = int(math.floor((pxmin - ox) / res))
    c1 = int(math.floor((pxmax - ox) / res))
    r0 = int(math.floor((pymin - oy) / res))
    r1 = int(math.floor((pymax - oy) / res))
    if c0 < 0 or r0 < 0 or c1 >= w or r1 >= h:
        return True
    for r in range(r0, r1 + 1):
        cy0 = oy + r * res
        cy1 = cy0 + res
        for c in range(c0, c1 + 1):
            if not cells[r, c]:
                continue
            cx0 = ox + c * res
            cx1 = cx0 + res
            if pxmax <= cx0 or pxmin >= cx1 or pymax <= cy0 or pymin >= cy1:
                continue
            separated = False
            for i in range(n):
                j = (i + 1) % n
                # outward normal of CCW edge i
                nx = poly[j, 1] - poly[i, 1]
                ny = -(poly[j, 0] - poly[i, 0])
                pmax = nx * poly[i, 0] + ny * poly[i, 1]
                cmin = min(min(nx * cx0 + ny * cy0, nx * cx1 + ny * cy0), min(nx * cx0 + ny * cy1, nx * cx1 + ny * cy1))
                if cmin >= pmax:
                    separated = True
                    break
            if not separated:
                return True
    return False


def polygon_collides(grid: OccupancyGrid, world_poly: np.ndarray) -> bool:
    """True iff a CCW convex world polygon overlaps an occupied cell with positive area.

    Any part of the polygon outside the grid counts as a collision.
    """
    return bool(
        _polygon_hits_cells(grid.cells, grid.resolution, grid.origin[0], grid.origin[1], np.ascontiguousarray(world_poly, dtype=np.float64))
    )


def footprint_collides(grid: OccupancyGrid, pose: Pose2D, footprint: Footprint) -> bool:
    """Physical (non-inflated) footprint at ``pose`` against the grid."""
    return polygon_collides(grid, transform_points(footprint.polygon, pose))
