"""Raster data model and ESRI ASCII grid I/O.

Grids are north-up, row-major, top row first. Categorical grids carry small
positive integer class codes (0 is reserved and never a valid class); the
legend lives in a ``<name>.legend.json`` sidecar next to the ``.asc`` file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

V, I, S, WATER = 1, 2, 3, 4
CANONICAL_LEGEND = {V: "V", I: "I", S: "S", WATER: "Water"}

_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class GridHeader:
    ncols: int
    nrows: int
    xllcorner: float = 0.0
    yllcorner: float = 0.0
    cellsize: float = 30.0
    nodata_value: float = -9999.0

    def __post_init__(self):
        if self.ncols < 1 or self.nrows < 1:
            raise GridError(f"grid must be at least 1x1, got {self.nrows}x{self.ncols}")
        if not self.cellsize > 0:
            raise GridError(f"cellsize must be positive, got {self.cellsize}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nrows, self.ncols)


@dataclass(frozen=True, eq=False)
class CategoricalGrid:
    header: GridHeader
    cells: np.ndarray
    legend: dict[int, str] = field(default_factory=lambda: dict(CANONICAL_LEGEND))

    def __post_init__(self):
        cells = np.array(self.cells, dtype=np.int64, copy=True)
        if cells.shape != self.header.shape:
            raise GridError(f"cell count mismatch: header says {self.header.shape}, got {cells.shape}")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        legend = {int(k): str(v) for k, v in self.legend.items()}
        object.__setattr__(self, "legend", legend)
        codes = np.unique(cells[self.valid])
        missing = [int(c) for c in codes if int(c) not in legend]
        if missing:
            raise GridError(f"codes {missing} not in legend")

    @property
    def nodata(self) -> int:
        return int(self.header.nodata_value)

    @property
    def valid(self) -> np.ndarray:
        """Boolean mask of cells that are not nodata."""
        return self.cells != self.nodata

    def with_cells(self, cells: np.ndarray) -> CategoricalGrid:
        return replace(self, cells=cells)

    def __eq__(self, other):
        if not isinstance(other, CategoricalGrid):
            return NotImplemented
        return (self.header == other.header and self.legend == other.legend
                and np.array_equal(self.cells, other.cells))


@dataclass(frozen=True, eq=False)
class ContinuousGrid:
    header: GridHeader
    cells: np.ndarray

    def __post_init__(self):
        cells = np.array(self.cells, dtype=np.float64, copy=True)
        if cells.shape != self.header.shape:
            raise GridError(f"cell count mismatch: header says {self.header.shape}, got {cells.shape}")
        if not np.all(np.isfinite(cells)):
            raise GridError("continuous grid contains NaN or Inf; mark gaps with nodata_value")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    @property
    def valid(self) -> np.ndarray:
        return self.cells != self.header.nodata_value

    def with_cells(self, cells: np.ndarray) -> ContinuousGrid:
        return replace(self, cells=cells)

    def __eq__(self, other):
        if not isinstance(other, ContinuousGrid):
            return NotImplemented
        return self.header == other.header and np.array_equal(self.cells, other.cells)


Grid = CategoricalGrid | ContinuousGrid


def _parse_header(lines: list[str], path) -> tuple[GridHeader, int]:
    values: dict[str, str] = {}
    n = 0
    for line in lines:
        parts = line.split()
        if not parts:
            n += 1
            continue
        key = parts[0].lower()
        if key not in _HEADER_KEYS:
            break
        if key in values:
            raise GridError(f"{path}: malformed header, duplicate key {parts[0]!r}")
        if len(parts) != 2:
            raise GridError(f"{path}: malformed header line {line.strip()!r}")
        values[key] = parts[1]
        n += 1
    missing = [k for k in _HEADER_KEYS if k not in values]
    if missing:
        raise GridError(f"{path}: malformed header, missing key(s) {missing}")
    try:
        header = GridHeader(
            ncols=int(values["ncols"]),
            nrows=int(values["nrows"]),
            xllcorner=float(values["xllcorner"]),
            yllcorner=float(values["yllcorner"]),
            cellsize=float(values["cellsize"]),
            nodata_value=float(values["nodata_value"]),
        )
    except ValueError as exc:
        raise GridError(f"{path}: malformed header value: {exc}") from None
    return header, n


def legend_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".legend.json")


def read_ascii_grid(path: str | Path, kind: str = "categorical") -> Grid:
    """Read an ESRI ASCII grid.

    ``kind`` is ``"categorical"`` or ``"continuous"``. Categorical reads pick
    up the legend sidecar when present and fall back to the canonical legend.
    """
    if kind not in ("categorical", "continuous"):
        raise ValueError(f"unknown grid kind {kind!r}")
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise GridError(f"{path}: unreadable file: {exc}") from None
    lines = text.splitlines()
    header, n = _parse_header(lines, path)
    rows = [ln.split() for ln in lines[n:] if ln.strip()]
    if len(rows) != header.nrows or any(len(r) != header.ncols for r in rows):
        raise GridError(
            f"{path}: cell count mismatch, expected {header.nrows} rows of {header.ncols} values"
        )
    if kind == "continuous":
        try:
            cells = np.array([[float(v) for v in r] for r in rows])
        except ValueError as exc:
            raise GridError(f"{path}: non-numeric cell value: {exc}") from None
        return ContinuousGrid(header, cells)

    cells = np.empty(header.shape, dtype=np.int64)
    for i, r in enumerate(rows):
        for j, tok in enumerate(r):
            try:
                v = float(tok)
            except ValueError:
                raise GridError(f"{path}: non-numeric cell value {tok!r}") from None
            if not v.is_integer():
                raise GridError(f"{path}: non-integer value {tok!r} in categorical grid")
            cells[i, j] = int(v)
    lp = legend_path(path)
    if lp.exists():
        legend = {int(k): v for k, v in json.loads(lp.read_text()).items()}
    else:
        legend = dict(CANONICAL_LEGEND)
    return CategoricalGrid(header, cells, legend)


def _fmt_number(x: float) -> str:
    return str(int(x)) if float(x).is_integer() and abs(x) < 1e15 else repr(float(x))


def write_ascii_grid(grid: Grid, path: str | Path) -> None:
    """Write ``grid`` as an ESRI ASCII grid (plus legend sidecar if categorical)."""
    path = Path(path)
    h = grid.header
    out = [
        f"ncols {h.ncols}",
        f"nrows {h.nrows}",
        f"xllcorner {_fmt_number(h.xllcorner)}",
        f"yllcorner {_fmt_number(h.yllcorner)}",
        f"cellsize {_fmt_number(h.cellsize)}",
        f"NODATA_value {_fmt_number(h.nodata_value)}",
    ]
    if isinstance(grid, CategoricalGrid):
        out.extend(" ".join(str(int(v)) for v in row) for row in grid.cells)
    else:
        # repr() round-trips doubles exactly (17 significant digits max)
        out.extend(" ".join(_fmt_number(v) for v in row) for row in grid.cells)
    try:
        path.write_text("\n".join(out) + "\n")
        if isinstance(grid, CategoricalGrid):
            legend_path(path).write_text(
                json.dumps({str(k): v for k, v in sorted(grid.legend.items())}, indent=2)
            )
    except OSError as exc:
        raise GridError(f"{path}: unwritable path: {exc}") from None


def validate_alignment(grids: Sequence[Grid | None]) -> None:
    """Raise :class:`GridError` naming the first header field that differs."""
    grids = [g for g in grids if g is not None]
    if not grids:
        raise GridError("validate_alignment needs at least one grid")
    ref = grids[0].header
    for g in grids[1:]:
        for f in fields(GridHeader):
            a, b = getattr(ref, f.name), getattr(g.header, f.name)
            if a != b:
                raise GridError(f"grids not aligned: {f.name} differs ({a} vs {b})")


def countable(grid: CategoricalGrid, mask: CategoricalGrid | None = None,
              mask_codes: Sequence[int] = (WATER,)) -> np.ndarray:
    """Cells that are valid in ``grid`` and not excluded by ``mask``.

    A mask cell excludes its grid cell when it carries one of ``mask_codes``.
    Mask nodata does not exclude.
    """
    ok = grid.valid.copy()
    if mask is not None:
        validate_alignment([grid, mask])
        ok &= ~np.isin(mask.cells, list(mask_codes))
    return ok


def class_frequencies(grid: CategoricalGrid, classes: Sequence[int],
                      mask: CategoricalGrid | None = None) -> np.ndarray:
    """Share of each class in ``classes`` among counted cells.

    Cells with nodata, masked cells and cells whose code is not listed in
    ``classes`` are not counted.
    """
    if len(classes) == 0:
        raise GridError("classes must be non-empty")
    ok = countable(grid, mask)
    vals = grid.cells[ok]
    counts = np.array([np.count_nonzero(vals == c) for c in classes], dtype=float)
    total = counts.sum()
    if total == 0:
        raise GridError("no countable cells")
    return counts / total


def reclass_group(grid: CategoricalGrid, group_map: Mapping[int, int],
                  legend: Mapping[int, str] | None = None) -> CategoricalGrid:
    """Replace every valid cell code by ``group_map[code]``."""
    valid = grid.valid
    present = np.unique(grid.cells[valid])
    unmapped = [int(c) for c in present if int(c) not in group_map]
    if unmapped:
        raise GridError(f"unmapped code(s) {unmapped}")
    out = grid.cells.copy()
    for src, dst in group_map.items():
        out[(grid.cells == src) & valid] = dst
    if legend is None:
        legend = {}
        for c in set(group_map.values()):
            if group_map.get(c) == c and c in grid.legend:
                legend[c] = grid.legend[c]
            else:
                legend[c] = CANONICAL_LEGEND.get(c, str(c))
    return CategoricalGrid(grid.header, out, dict(legend))
