"""Occupancy grid shared by generation, raycasting, planning and collision."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(eq=False)
class OccupancyGrid:
    """Boolean occupancy map.

    ``cells[row, col]`` is True for an occupied cell. Rows grow with world y,
    columns with world x, and ``origin`` is the world position of the lower-left
    corner of cell (0, 0).
    """

    cells: np.ndarray
    resolution: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        self.cells = np.ascontiguousarray(self.cells, dtype=bool)
        if self.cells.ndim != 2 or min(self.cells.shape) < 1:
            raise ValueError("cells must be a non-empty 2D array")
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        self.resolution = float(self.resolution)
        self.origin = (float(self.origin[0]), float(self.origin[1]))

    @property
    def width_cells(self) -> int:
        return self.cells.shape[1]

    @property
    def height_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax) in world coordinates."""
        ox, oy = self.origin
        return (ox, oy, ox + self.width_cells * self.resolution, oy + self.height_cells * self.resolution)

    def world_to_cell(self, x: float, y: float) -> tuple[int, int]:
        """(row, col) of the cell containing world point (x, y); may be out of bounds."""
        col = math.floor((x - self.origin[0]) / self.resolution)
        row = math.floor((y - self.origin[1]) / self.resolution)
        return row, col

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        return (
            self.origin[0] + (col + 0.5) * self.resolution,
            self.origin[1] + (row + 0.5) * self.resolution,
        )

    def in_bounds(self, row: int, col: int) -> bool:
        return 0 <= row < self.height_cells and 0 <= col < self.width_cells

    def contains_point(self, x: float, y: float) -> bool:
        xmin, ymin, xmax, ymax = self.extent
        return xmin <= x < xmax and ymin <= y < ymax

    def is_free(self, x: float, y: float) -> bool:
        row, col = self.world_to_cell(x, y)
        return self.in_bounds(row, col) and not self.cells[row, col]

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(self.cells.copy(), self.resolution, self.origin)

    def __eq__(self, other):
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return (
            self.resolution == other.resolution
            and self.origin == other.origin
            and self.cells.shape == other.cells.shape
            and bool(np.array_equal(self.cells, other.cells))
        )

    def __repr__(self):
        return (
            f"OccupancyGrid({self.width_cells}x{self.height_cells}, "
            f"res={self.resolution}, origin={self.origin}, occupied={int(self.cells.sum())})"
        )
