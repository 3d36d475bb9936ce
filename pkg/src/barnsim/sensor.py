"""Planar LiDAR simulation by exact grid traversal."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TextIO

import numba
import numpy as np

from .geometry import Pose2D
from .grid import OccupancyGrid

FOV_270 = 1.5 * math.pi


@dataclass(frozen=True)
class BeamConfig:
    fov: float = FOV_270
    beam_count: int = 720
    max_range: float = 10.0
    mount_offset: Pose2D = field(default_factory=Pose2D)

    def __post_init__(self):
        if self.beam_count < 2:
            raise ValueError("beam_count must be >= 2")
        if not 0 < self.fov <= 2 * math.pi:
            raise ValueError("fov must lie in (0, 2pi]")

    @property
    def angle_min(self) -> float:
        return -0.5 * self.fov

    @property
    def angle_max(self) -> float:
        return 0.5 * self.fov

    @property
    def increment(self) -> float:
        return self.fov / (self.beam_count - 1)

    def angles(self) -> np.ndarray:
        """Beam bearings in the sensor frame."""
        return self.angle_min + self.increment * np.arange(self.beam_count)


@dataclass(eq=False)
class LaserScan:
    ranges: np.ndarray
    config: BeamConfig
    stamp: float = 0.0

    def sensor_pose(self, robot_pose: Pose2D) -> Pose2D:
        return robot_pose.compose(self.config.mount_offset)

    def points_sensor_frame(self, hits_only: bool = True) -> np.ndarray:
        a = self.config.angles()
        r = self.ranges
        if hits_only:
            keep = r < self.config.max_range
            a, r = a[keep], r[keep]
        return np.column_stack([r * np.cos(a), r * np.sin(a)])

    def points_robot_frame(self, hits_only: bool = True) -> np.ndarray:
        m = self.config.mount_offset
        p = self.points_sensor_frame(hits_only)
        c, s = math.cos(m.theta), math.sin(m.theta)
        return p @ np.array([[c, s], [-s, c]]) + np.array([m.x, m.y])

    def points_world(self, robot_pose: Pose2D, hits_only: bool = True) -> np.ndarray:
        sp = self.sensor_pose(robot_pose)
        p = self.points_sensor_frame(hits_only)
        c, s = math.cos(sp.theta), math.sin(sp.theta)
        return p @ np.array([[c, s], [-s, c]]) + np.array([sp.x, sp.y])


@numba.njit(cache=True)
def _cast(cells, res, ox, oy, sx, sy, angles, max_range, out):
    h, w = cells.shape
    gx = (sx - ox) / res
    gy = (sy - oy) / res
    col0 = int(math.floor(gx))
    row0 = int(math.floor(gy))
    inside = 0 <= row0 < h and 0 <= col0 < w
    if inside and cells[row0, col0]:
        out[:] = 0.0
        return
    for i in range(angles.shape[0]):
        dx = math.cos(angles[i])
        dy = math.sin(angles[i])
        col = col0
        row = row0
        if dx > 0:
            step_c = 1
            t_max_x = ((col + 1) * res + ox - sx) / dx
            t_dx = res / dx
        elif dx < 0:
            step_c = -1
            t_max_x = (col * res + ox - sx) / dx
            t_dx = -res / dx
        else:
            step_c = 0
            t_max_x = math.inf
            t_dx = math.inf
        if dy > 0:
            step_r = 1
            t_max_y = ((row + 1) * res + oy - sy) / dy
            t_dy = res / dy
        elif dy < 0:
            step_r = -1
            t_max_y = (row * res + oy - sy) / dy
            t_dy = -res / dy
        else:
            step_r = 0
            t_max_y = math.inf
            t_dy = math.inf
        r = max_range
        while True:
            if t_max_x < t_max_y:
                t = t_max_x
                col += step_c
                t_max_x += t_dx
            else:
                t = t_max_y
                row += step_r
                t_max_y += t_dy
            if t >= max_range:
                break
            if row < 0 or col < 0 or row >= h or col >= w:
                break
            if cells[row, col]:
                r = t
                break
        out[i] = r


def raycast_scan(
    grid: OccupancyGrid,
    robot_pose: Pose2D,
    config: BeamConfig = BeamConfig(),
    stamp: float = 0.0,
    noise_std: float = 0.0,
    rng=None,
) -> LaserScan:
    """Range to the entry face of the first occupied cell along each beam.

    Beams that leave the grid or travel ``max_range`` without a hit report
    ``max_range``. A sensor origin inside an occupied cell yields all zeros.
    ``rng`` needs a ``gauss()`` method and is only used when ``noise_std > 0``.
    """
    sp = robot_pose.compose(config.mount_offset)
    angles = config.angles() + sp.theta
    out = np.empty(config.beam_count)
    _cast(grid.cells, grid.resolution, grid.origin[0], grid.origin[1], sp.x, sp.y, angles, float(config.max_range), out)
    if noise_std > 0 and out.any():
        hit = out < config.max_range
        noise = np.array([rng.gauss() for _ in range(config.beam_count)]) * noise_std
        out = np.where(hit, np.clip(out + noise, 1e-3, config.max_range), out)
    return LaserScan(out, config, stamp)


def format_scan_record(scan: LaserScan, pose: Pose2D) -> str:
    """One trace line: ``t, x, y, theta, r0 r1 ...``."""
    ranges = " ".join(repr(float(r)) for r in scan.ranges)
    return f"{scan.stamp!r}, {pose.x!r}, {pose.y!r}, {pose.theta!r}, {ranges}"


def parse_scan_record(line: str, config: BeamConfig) -> tuple[LaserScan, Pose2D]:
    t, x, y, th, rest = line.split(", ", 4)
    ranges = np.array([float(v) for v in rest.split()])
    if len(ranges) != config.beam_count:
        raise ValueError(f"expected {config.beam_count} ranges, got {len(ranges)}")
    return LaserScan(ranges, config, float(t)), Pose2D(float(x), float(y), float(th))


def write_scan_trace(stream: TextIO, scan: LaserScan, pose: Pose2D) -> None:
    stream.write(format_scan_record(scan, pose) + "\n")
