"""Temporal growth factor tables and the replicated HMM observation sequence."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class FactorError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FactorTable:
    years: tuple[int, ...]
    factor_names: tuple[str, ...]
    values: np.ndarray
    step: int = 1

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim != 2:
            raise FactorError("values must be a T x D matrix")
        object.__setattr__(self, "years", tuple(int(y) for y in self.years))
        object.__setattr__(self, "factor_names", tuple(self.factor_names))
        if values.shape != (len(self.years), len(self.factor_names)):
            raise FactorError(
                f"values shape {values.shape} does not match "
                f"{len(self.years)} years x {len(self.factor_names)} factors"
            )
        if not np.all(np.isfinite(values)):
            raise FactorError("missing or non-finite value in factor table")
        diffs = np.diff(self.years)
        if np.any(diffs <= 0):
            raise FactorError("years must be strictly increasing")
        if np.any(diffs > self.step):
            raise FactorError(f"gap larger than {self.step} year(s) in factor table")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __eq__(self, other):
        if not isinstance(other, FactorTable):
            return NotImplemented
        return (self.years == other.years and self.factor_names == other.factor_names
                and np.array_equal(self.values, other.values))


@dataclass(frozen=True, eq=False)
class ObservationSequence:
    observations: np.ndarray  # (T * repeat_factor) x D
    repeat_factor: int = 1

    def __post_init__(self):
        obs = np.array(self.observations, dtype=float, copy=True)
        if obs.ndim == 1:
            obs = obs[:, None]
        obs.setflags(write=False)
        object.__setattr__(self, "observations", obs)
        if self.repeat_factor < 1:
            raise FactorError("repeat_factor must be >= 1")

    def __len__(self):
        return self.observations.shape[0]

    @property
    def dim(self) -> int:
        return self.observations.shape[1]


def load_factor_table(path: str | Path, step: int = 1) -> FactorTable:
    """Parse ``year,<name1>,...,<nameD>`` CSV rows into a :class:`FactorTable`."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if any(c.strip() for c in r)]
    if not rows:
        raise FactorError("empty factor file")
    head, body = rows[0], rows[1:]
    if len(head) < 2 or head[0].strip().lower() != "year":
        raise FactorError("header must be 'year,<factor>,...'")
    if not body:
        raise FactorError("no records")
    names = [h.strip() for h in head[1:]]
    years, values = [], []
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(head) or any(not c.strip() for c in row):
            raise FactorError(f"line {lineno}: missing value")
        try:
            year = int(row[0])
            vals = [float(c) for c in row[1:]]
        except ValueError:
            raise FactorError(f"line {lineno}: non-numeric cell") from None
        if not all(math.isfinite(v) for v in vals):
            raise FactorError(f"line {lineno}: missing value")
        if year in years:
            raise FactorError(f"duplicate year {year}")
        if years and year < years[-1]:
            raise FactorError(f"unsorted years at line {lineno}")
        years.append(year)
        values.append(vals)
    return FactorTable(tuple(years), tuple(names), np.array(values), step=step)


def write_factor_table(table: FactorTable, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["year", *table.factor_names])
        for year, row in zip(table.years, table.values):
            w.writerow([year, *(repr(float(v)) for v in row)])


def normalize_min_max(table: FactorTable) -> FactorTable:
    """Rescale every column to [0, 1]; constant columns become all zeros."""
    v = table.values
    lo, hi = v.min(axis=0), v.max(axis=0)
    span = hi - lo
    out = np.zeros_like(v)
    nz = span > 0
    out[:, nz] = (v[:, nz] - lo[nz]) / span[nz]
    return FactorTable(table.years, table.factor_names, out, step=table.step)


def build_observation_sequence(table: FactorTable, repeat_factor: int = 6) -> ObservationSequence:
    """Repeat each yearly vector ``repeat_factor`` times, preserving year order."""
    if repeat_factor < 1:
        raise FactorError("repeat_factor must be >= 1")
    v = table.values
    if np.any(v < -1e-12) or np.any(v > 1 + 1e-12):
        raise FactorError("factor table is not normalized to [0, 1]")
    return ObservationSequence(np.repeat(v, repeat_factor, axis=0), repeat_factor)
