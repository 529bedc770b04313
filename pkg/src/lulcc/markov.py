"""Markov-chain baseline: transition matrices from grid pairs and their
extrapolation to longer periods."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .grid import CategoricalGrid, GridError, countable, validate_alignment

ROW_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    classes: tuple[int, ...]
    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float, copy=True)
        classes = tuple(int(c) for c in self.classes)
        n = len(classes)
        if probs.shape != (n, n):
            raise ValueError(f"probs must be {n}x{n}, got {probs.shape}")
        if np.any(probs < 0) or np.any(probs > 1) or not np.all(np.isfinite(probs)):
            raise ValueError("transition probabilities must lie in [0, 1]")
        if np.any(np.abs(probs.sum(axis=1) - 1) > ROW_TOL):
            raise ValueError(f"rows must sum to 1, got {probs.sum(axis=1)}")
        probs.setflags(write=False)
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "probs", probs)

    def index(self, code: int) -> int:
        return self.classes.index(int(code))

    def prob(self, from_code: int, to_code: int) -> float:
        return float(self.probs[self.index(from_code), self.index(to_code)])

    def to_json(self) -> dict:
        return {"classes": list(self.classes), "probs": self.probs.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> TransitionMatrix:
        return cls(tuple(obj["classes"]), np.array(obj["probs"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> TransitionMatrix:
        return cls.from_json(json.loads(Path(path).read_text()))

    def __eq__(self, other):
        if not isinstance(other, TransitionMatrix):
            return NotImplemented
        return self.classes == other.classes and np.array_equal(self.probs, other.probs)


def transition_counts(grid_t0: CategoricalGrid, grid_t1: CategoricalGrid, classes: Sequence[int],
                      mask: CategoricalGrid | None = None) -> np.ndarray:
    """Integer cross-tabulation ``counts[i, j]`` of class i at t0 and j at t1."""
    validate_alignment([grid_t0, grid_t1, mask])
    if len(classes) == 0:
        raise GridError("classes must be non-empty")
    ok = countable(grid_t0, mask) & grid_t1.valid
    a, b = grid_t0.cells[ok], grid_t1.cells[ok]
    codes = np.asarray(classes, dtype=np.int64)
    lut_size = int(max(codes.max(), a.max(initial=0), b.max(initial=0))) + 1
    lut = np.full(lut_size, -1, dtype=np.int64)
    lut[codes] = np.arange(len(codes))
    ia, ib = lut[a], lut[b]
    if np.any(ia < 0) or np.any(ib < 0):
        bad = sorted(set(a[ia < 0].tolist()) | set(b[ib < 0].tolist()))
        raise GridError(f"cell class(es) {bad} outside classes {list(classes)}")
    n = len(codes)
    return np.bincount(ia * n + ib, minlength=n * n).reshape(n, n)


def estimate_transition_matrix(grid_t0: CategoricalGrid, grid_t1: CategoricalGrid,
                               classes: Sequence[int],
                               mask: CategoricalGrid | None = None) -> TransitionMatrix:
    """Row-normalized transition counts. Classes absent at t0 persist (identity row)."""
    counts = transition_counts(grid_t0, grid_t1, classes, mask).astype(float)
    rows = counts.sum(axis=1)
    probs = np.eye(len(classes))
    nz = rows > 0
    probs[nz] = counts[nz] / rows[nz, None]
    return TransitionMatrix(tuple(classes), probs)


def extrapolate_matrix_power(A: TransitionMatrix, k: int) -> TransitionMatrix:
    if k < 0 or int(k) != k:
        raise ValueError(f"k must be a non-negative integer, got {k}")
    out = np.eye(len(A.classes))
    for _ in range(int(k)):
        out = out @ A.probs
    # repeated products drift by a few ulps; keep rows exactly stochastic-safe
    out = np.clip(out, 0.0, 1.0)
    return TransitionMatrix(A.classes, out)


def extrapolate_elementwise_power(A: TransitionMatrix, exponent: float) -> TransitionMatrix:
    """Raise every entry to ``exponent`` and renormalize rows.

    This is the ad hoc "power law" rule (``a_11 -> a_11 ** 2`` for a doubled
    period), made stochastic again by row renormalization.
    """
    if not exponent > 0:
        raise ValueError(f"exponent must be positive, got {exponent}")
    if exponent == 1:
        return TransitionMatrix(A.classes, A.probs)
    # dividing by the row max first keeps large exponents from underflowing a whole row
    p = np.power(A.probs / A.probs.max(axis=1, keepdims=True), exponent)
    return TransitionMatrix(A.classes, p / p.sum(axis=1, keepdims=True))


def extrapolate(A: TransitionMatrix, ratio: float) -> TransitionMatrix:
    """Matrix power for integer period ratios, elementwise power otherwise."""
    if ratio < 0:
        raise ValueError("period ratio must be non-negative")
    if float(ratio).is_integer():
        return extrapolate_matrix_power(A, int(ratio))
    return extrapolate_elementwise_power(A, ratio)
