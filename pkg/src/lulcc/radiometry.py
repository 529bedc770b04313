"""Single-band preprocessing: SLC-off gap filling, dark-object subtraction and
DN -> radiance -> top-of-atmosphere reflectance conversion.

Radiance uses ``L = L_min + (L_max - L_min) / dn_span * DN`` with
``dn_span = 254`` by default, so DN 0 maps to L_min and DN 254 to L_max.
The commonly reproduced "(254 - 255)" denominator is a typo: it would make
radiance decrease with DN.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import ContinuousGrid


@dataclass(frozen=True)
class BandCalibration:
    l_min: float
    l_max: float
    esun: float
    sun_zenith_deg: float
    earth_sun_distance_au: float
    dn_span: float = 254.0

    def __post_init__(self):
        if not self.l_max > self.l_min:
            raise ValueError(f"l_max ({self.l_max}) must exceed l_min ({self.l_min})")
        if not self.esun > 0:
            raise ValueError("esun must be positive")
        if not 0 <= self.sun_zenith_deg < 90:
            raise ValueError(f"sun_zenith_deg must lie in [0, 90), got {self.sun_zenith_deg}")
        if not self.earth_sun_distance_au > 0:
            raise ValueError("earth_sun_distance_au must be positive")
        if not self.dn_span > 0:
            raise ValueError("dn_span must be positive")


def load_calibration(path: str | Path) -> dict[str, BandCalibration]:
    """Load per-band calibrations from JSON.

    Accepts either a single calibration object (returned under key ``"band"``)
    or an object mapping band names to calibration objects.
    """
    data = json.loads(Path(path).read_text())
    if "l_min" in data:
        return {"band": BandCalibration(**data)}
    return {name: BandCalibration(**obj) for name, obj in data.items()}


def _window_mode(values: np.ndarray) -> float:
    uniq, counts = np.unique(values, return_counts=True)
    # np.unique sorts ascending, argmax takes the first max -> smallest value wins ties
    return float(uniq[np.argmax(counts)])


def slc_gap_fill(band: ContinuousGrid, window: int = 9, max_passes: int = 5) -> ContinuousGrid:
    """Fill nodata cells with the mode of valid values in a clipped window.

    Each pass reads the previous pass's state only, so the result does not
    depend on cell visiting order. Cells whose window holds no valid value in
    a pass wait for a later pass; whatever is left after ``max_passes`` stays
    nodata.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be an odd positive integer, got {window}")
    if max_passes < 1:
        raise ValueError("max_passes must be positive")
    nd = band.header.nodata_value
    cells = band.cells.copy()
    half = window // 2
    nrows, ncols = cells.shape
    for _ in range(max_passes):
        gaps = np.argwhere(cells == nd)
        if len(gaps) == 0:
            break
        prev = cells.copy()
        filled = 0
        for r, c in gaps:
            win = prev[max(r - half, 0):min(r + half + 1, nrows),
                       max(c - half, 0):min(c + half + 1, ncols)]
            vals = win[win != nd]
            if vals.size:
                cells[r, c] = _window_mode(vals)
                filled += 1
        if filled == 0:
            break
    return band.with_cells(cells)


def dark_object_subtract(band: ContinuousGrid, dark_dn: float) -> ContinuousGrid:
    if not math.isfinite(dark_dn):
        raise ValueError("dark_dn must be finite")
    nd = band.header.nodata_value
    valid = band.cells != nd
    out = band.cells.copy()
    out[valid] = np.maximum(out[valid] - dark_dn, 0.0)
    return band.with_cells(out)


def dn_to_radiance(dn, cal: BandCalibration):
    """Spectral radiance for digital number(s) ``dn`` in [0, 255]."""
    arr = np.asarray(dn, dtype=float)
    if np.any((arr < 0) | (arr > 255)) or np.any(~np.isfinite(arr)):
        raise ValueError("DN out of range [0, 255]")
    # interpolation form keeps both endpoints exact in floating point
    t = arr / cal.dn_span
    out = cal.l_min * (1.0 - t) + cal.l_max * t
    return float(out) if out.ndim == 0 else out


def toa_reflectance(radiance, cal: BandCalibration):
    """Unitless planetary reflectance from at-sensor radiance."""
    cos_sz = math.cos(math.radians(cal.sun_zenith_deg))
    out = math.pi * np.asarray(radiance, dtype=float) * cal.earth_sun_distance_au ** 2 / (cal.esun * cos_sz)
    return float(out) if np.ndim(out) == 0 else out


def band_to_reflectance(band: ContinuousGrid, cal: BandCalibration) -> ContinuousGrid:
    """Apply :func:`dn_to_radiance` and :func:`toa_reflectance` to every valid cell."""
    valid = band.valid
    out = band.cells.copy()
    out[valid] = toa_reflectance(dn_to_radiance(out[valid], cal), cal)
    return band.with_cells(out)
