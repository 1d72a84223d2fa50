"""Ground-truth coverage: fraction of a fixed grid over the (x, y) space that
the repertoire's final positions have reached at least once."""

from __future__ import annotations

import logging
import math

import numpy as np

log = logging.getLogger(__name__)


class CoverageGrid:
    """Boolean occupancy over a resolution x resolution grid. Cells are
    half-open, boundary points fall into the higher-index cell, and the top
    edges are clamped inward, so the mapping is unambiguous everywhere."""

    def __init__(self, bounds, resolution: int = 50):
        xmin, ymin, xmax, ymax = bounds
        if resolution < 1:
            raise ValueError("grid resolution must be at least 1")
        if not (xmax > xmin and ymax > ymin):
            raise ValueError(f"degenerate bounds {bounds}")
        self.bounds = (float(xmin), float(ymin), float(xmax), float(ymax))
        self.resolution = resolution
        self.occupied = np.zeros((resolution, resolution), dtype=bool)

    def _cell(self, x: float, y: float):
        xmin, ymin, xmax, ymax = self.bounds
        if not (xmin <= x <= xmax and ymin <= y <= ymax):
            log.warning("point (%g, %g) outside bounds %s; clamped", x, y, self.bounds)
            x = min(max(x, xmin), xmax)
            y = min(max(y, ymin), ymax)
        res = self.resolution
        ix = min(int(math.floor((x - xmin) / (xmax - xmin) * res)), res - 1)
        iy = min(int(math.floor((y - ymin) / (ymax - ymin) * res)), res - 1)
        return ix, iy

    def add(self, x: float, y: float):
        ix, iy = self._cell(x, y)
        self.occupied[ix, iy] = True

    def add_points(self, points):
        for x, y in points:
            self.add(x, y)

    def coverage(self) -> float:
        """Percentage of cells reached, in [0, 100]."""
        total = self.resolution * self.resolution
        return 100.0 * int(self.occupied.sum()) / total


def coverage(points, bounds, resolution: int = 50) -> float:
    grid = CoverageGrid(bounds, resolution)
    grid.add_points(points)
    return grid.coverage()


def coverage_curve(point_batches, bounds, resolution: int = 50):
    """Cumulative coverage after each batch of archived positions.

    Returns one (points so far, coverage) pair per batch; occupancy only ever
    grows, so the curve is monotone non-decreasing."""
    grid = CoverageGrid(bounds, resolution)
    curve = []
    count = 0
    for batch in point_batches:
        grid.add_points(batch)
        count += len(batch)
        curve.append((count, grid.coverage()))
    return curve
