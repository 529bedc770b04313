"""Spatial driver rasters and their association with land-cover outcomes."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .grid import CategoricalGrid, ContinuousGrid, GridError, countable, validate_alignment

SLOPE_MAX = 255.0
SUITABILITY_EXPONENT = 0.1


def horn_gradient(z: np.ndarray, cellsize: float) -> tuple[np.ndarray, np.ndarray]:
    """Horn 3x3 finite differences ``(dz/dx, dz/dy)``.

    At the border the stencil is clipped: the missing row/column is replaced
    by the center one and the run shrinks from two cells to one.
    """
    nrows, ncols = z.shape
    p = np.pad(z, 1, mode="edge")
    # p[1 + dr : ..., 1 + dc : ...] is the neighbor at offset (dr, dc)
    def nb(dr, dc):
        return p[1 + dr:1 + dr + nrows, 1 + dc:1 + dc + ncols]

    run_x = np.full(ncols, 2.0)
    run_y = np.full(nrows, 2.0)
    if ncols > 1:
        run_x[[0, -1]] = 1.0
    if nrows > 1:
        run_y[[0, -1]] = 1.0
    dx = ((nb(-1, 1) + 2 * nb(0, 1) + nb(1, 1)) - (nb(-1, -1) + 2 * nb(0, -1) + nb(1, -1)))
    dx = dx / (4.0 * run_x[None, :] * cellsize)
    # rows run north to south, so +y is the row above
    dy = ((nb(-1, -1) + 2 * nb(-1, 0) + nb(-1, 1)) - (nb(1, -1) + 2 * nb(1, 0) + nb(1, 1)))
    dy = dy / (4.0 * run_y[:, None] * cellsize)
    return dx, dy


def slope_from_dem(dem: ContinuousGrid) -> ContinuousGrid:
    """Slope magnitude (rise/run) rescaled linearly to [0, 255].

    A grid whose raw slope is the same everywhere maps to all zeros.
    """
    if dem.header.nrows < 2 or dem.header.ncols < 2:
        raise GridError("slope needs a DEM of at least 2x2 cells")
    if not np.all(dem.valid):
        raise GridError("DEM contains nodata cells; fill them before deriving slope")
    dx, dy = horn_gradient(dem.cells, dem.header.cellsize)
    raw = np.hypot(dx, dy)
    lo, hi = raw.min(), raw.max()
    if hi - lo <= 1e-12 * max(abs(hi), 1.0):
        return dem.with_cells(np.zeros_like(raw))
    return dem.with_cells((raw - lo) / (hi - lo) * SLOPE_MAX)


def slope_suitability(slope: ContinuousGrid) -> ContinuousGrid:
    """Negative power transform ``max(slope, 1) ** -0.1``; nodata passes through."""
    valid = slope.valid
    vals = slope.cells[valid]
    if np.any(vals < 0):
        raise GridError("negative slope value")
    out = slope.cells.copy()
    out[valid] = np.power(np.maximum(vals, 1.0), -SUITABILITY_EXPONENT)
    return slope.with_cells(out)


def proximity_transform(target_mask: CategoricalGrid, target_code: int) -> ContinuousGrid:
    """Exact Euclidean distance (map units) from each cell center to the nearest target cell."""
    target = target_mask.cells == target_code
    if not np.any(target):
        raise GridError(f"no target cells with code {target_code}")
    h = target_mask.header
    dist = ndimage.distance_transform_edt(~target, sampling=h.cellsize)
    return ContinuousGrid(h, dist)


def cramers_v_table(counts) -> float:
    """Cramér's V of an r x c contingency table (empty rows/columns dropped)."""
    t = np.asarray(counts, dtype=float)
    t = t[t.sum(axis=1) > 0][:, t.sum(axis=0) > 0]
    if t.size == 0:
        raise ValueError("empty contingency table")
    r, c = t.shape
    k = min(r, c)
    if k < 2:
        return 0.0
    n = t.sum()
    expected = np.outer(t.sum(axis=1), t.sum(axis=0)) / n
    chi2 = float(np.sum((t - expected) ** 2 / expected))
    v = np.sqrt(chi2 / (n * (k - 1)))
    return float(min(v, 1.0))


def contingency(driver: ContinuousGrid, outcome: CategoricalGrid, bins: int = 10,
                mask: CategoricalGrid | None = None) -> np.ndarray:
    """Counts of (equal-width driver bin, outcome code) over counted cells."""
    validate_alignment([driver, outcome, mask])
    if bins < 1:
        raise ValueError("bins must be positive")
    ok = countable(outcome, mask) & driver.valid
    x, y = driver.cells[ok], outcome.cells[ok]
    codes = np.unique(y)
    if codes.size < 2:
        raise GridError("fewer than 2 outcome categories among counted cells")
    lo, hi = x.min(), x.max()
    if hi == lo:
        idx = np.zeros(x.size, dtype=int)
    else:
        idx = np.minimum(((x - lo) / (hi - lo) * bins).astype(int), bins - 1)
    col = np.searchsorted(codes, y)
    table = np.zeros((bins, codes.size), dtype=np.int64)
    np.add.at(table, (idx, col), 1)
    return table


def cramers_v(driver: ContinuousGrid, outcome: CategoricalGrid, bins: int = 10,
              mask: CategoricalGrid | None = None) -> float:
    """Association between a binned driver and a categorical outcome, in [0, 1].

    A constant driver yields 0.
    """
    return cramers_v_table(contingency(driver, outcome, bins, mask))
