import numpy as np
import pytest

from taxons.metrics import CoverageGrid, coverage, coverage_curve

BOUNDS = (0.0, 0.0, 10.0, 10.0)


def brute_force_coverage(points, bounds, res):
    """Cell-enumeration oracle: mark cells by scanning all of them per point."""
    xmin, ymin, xmax, ymax = bounds
    cells = set()
    for x, y in points:
        x = min(max(x, xmin), xmax)
        y = min(max(y, ymin), ymax)
        for ix in range(res):
            x0 = xmin + (xmax - xmin) * ix / res
            x1 = xmin + (xmax - xmin) * (ix + 1) / res
            last_x = ix == res - 1
            if (x0 <= x < x1) or (last_x and x == xmax):
                for iy in range(res):
                    y0 = ymin + (ymax - ymin) * iy / res
                    y1 = ymin + (ymax - ymin) * (iy + 1) / res
                    last_y = iy == res - 1
                    if (y0 <= y < y1) or (last_y and y == ymax):
                        cells.add((ix, iy))
    return 100.0 * len(cells) / (res * res)


def test_no_points_zero():
    assert coverage([], BOUNDS, 50) == 0.0


def test_single_point_50x50():
    assert coverage([(1.0, 1.0)], BOUNDS, 50) == pytest.approx(0.04, abs=0)


def test_every_cell_center_full_coverage():
    res = 10
    pts = [((i + 0.5), (j + 0.5)) for i in range(10) for j in range(10)]
    assert coverage(pts, BOUNDS, res) == 100.0


def test_resolution_one_any_point():
    assert coverage([(3.0, 7.0)], BOUNDS, 1) == 100.0


def test_boundary_points_higher_cell_top_clamped():
    grid = CoverageGrid(BOUNDS, 10)
    grid.add(5.0, 5.0)       # interior boundary -> cell (5, 5)
    assert grid.occupied[5, 5]
    grid.add(10.0, 10.0)     # top corner clamps inward
    assert grid.occupied[9, 9]
    grid.add(0.0, 0.0)
    assert grid.occupied[0, 0]


def test_outside_point_clamped_and_warned(caplog):
    grid = CoverageGrid(BOUNDS, 10)
    with caplog.at_level("WARNING"):
        grid.add(-1.0, 5.0)
    assert grid.occupied[0, 5]
    assert any("outside bounds" in r.message for r in caplog.records)


def test_matches_brute_force_oracle_randomized():
    rng = np.random.default_rng(0)
    for _ in range(60):
        res = int(rng.integers(1, 12))
        n = int(rng.integers(0, 40))
        pts = [(rng.uniform(-1, 11), rng.uniform(-1, 11)) for _ in range(n)]
        assert coverage(pts, BOUNDS, res) == pytest.approx(
            brute_force_coverage(pts, BOUNDS, res), abs=1e-12)


def test_monotone_in_point_set():
    rng = np.random.default_rng(1)
    pts = [(rng.uniform(0, 10), rng.uniform(0, 10)) for _ in range(30)]
    base = coverage(pts, BOUNDS, 50)
    more = pts + [(rng.uniform(0, 10), rng.uniform(0, 10)) for _ in range(10)]
    assert coverage(more, BOUNDS, 50) >= base


def test_curve_empty_history():
    assert coverage_curve([], BOUNDS, 50) == []


def test_curve_monotone_and_final_matches_full_recompute():
    rng = np.random.default_rng(2)
    batches = [[(rng.uniform(0, 10), rng.uniform(0, 10)) for _ in range(5)]
               for _ in range(20)]
    curve = coverage_curve(batches, BOUNDS, 50)
    values = [c for _, c in curve]
    assert all(b >= a for a, b in zip(values, values[1:]))
    everything = [p for batch in batches for p in batch]
    assert values[-1] == pytest.approx(coverage(everything, BOUNDS, 50), abs=0)
    assert curve[-1][0] == len(everything)


def test_validates_inputs():
    with pytest.raises(ValueError):
        CoverageGrid(BOUNDS, 0)
    with pytest.raises(ValueError):
        CoverageGrid((0.0, 0.0, 0.0, - 1.0), 10)
