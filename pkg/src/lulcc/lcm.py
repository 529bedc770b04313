"""Land-change modeler.

Per-transition logistic sub-models turn driver rasters into transition
potentials; a transition matrix fixes how many cells change (the quantum);
allocation places each quantum on the highest-potential cells.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .grid import (I, S, V, CategoricalGrid, ContinuousGrid, GridError, countable,
                   validate_alignment)
from .markov import TransitionMatrix

DEFAULT_ALLOWED = ((V, S), (V, I), (S, V), (S, I))
POTENTIAL_NODATA = -9999.0


class LcmError(ValueError):
    pass


class SingleLabelWarning(UserWarning):
    """Samples carry only positive or only negative labels."""


class QuotaWarning(UserWarning):
    """A quota exceeds the number of eligible cells; allocation was capped."""


@dataclass(frozen=True)
class TransitionSamples:
    features: np.ndarray  # n x k
    labels: np.ndarray  # n, values 0/1
    feature_names: tuple[str, ...]
    cells: np.ndarray  # flat row-major indices of the sampled cells


@dataclass(frozen=True)
class LogisticModel:
    feature_names: tuple[str, ...]
    intercept: float
    coefficients: tuple[float, ...]
    means: tuple[float, ...]
    stds: tuple[float, ...]

    def __post_init__(self):
        k = len(self.feature_names)
        if not (len(self.coefficients) == len(self.means) == len(self.stds) == k):
            raise LcmError("coefficient / standardization length mismatch")
        vals = [self.intercept, *self.coefficients, *self.means, *self.stds]
        if not np.all(np.isfinite(vals)):
            raise LcmError("non-finite model parameter")
        if any(s <= 0 for s in self.stds):
            raise LcmError("standardization stddev must be positive")

    def linear_predictor(self, features: np.ndarray) -> np.ndarray:
        X = np.asarray(features, dtype=float)
        if X.ndim != 2:
            X = X.reshape(-1, len(self.feature_names))
        Z = (X - np.asarray(self.means)) / np.asarray(self.stds)
        return self.intercept + Z @ np.asarray(self.coefficients, dtype=float)

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        return _sigmoid(self.linear_predictor(features))

    def to_json(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "intercept": self.intercept,
            "coefficients": list(self.coefficients),
            "standardization": [{"mean": m, "stddev": s} for m, s in zip(self.means, self.stds)],
        }

    @classmethod
    def from_json(cls, obj: dict) -> LogisticModel:
        std = obj["standardization"]
        return cls(tuple(obj["feature_names"]), float(obj["intercept"]),
                   tuple(float(c) for c in obj["coefficients"]),
                   tuple(float(s["mean"]) for s in std), tuple(float(s["stddev"]) for s in std))


@dataclass(frozen=True)
class TransitionSubModel:
    from_class: int
    to_class: int
    model: LogisticModel

    def __post_init__(self):
        if self.from_class == self.to_class:
            raise LcmError("a sub-model needs distinct from/to classes")

    def to_json(self) -> dict:
        return {"from_class": self.from_class, "to_class": self.to_class, "model": self.model.to_json()}

    @classmethod
    def from_json(cls, obj: dict) -> TransitionSubModel:
        return cls(int(obj["from_class"]), int(obj["to_class"]), LogisticModel.from_json(obj["model"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> TransitionSubModel:
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass
class QuantumTable:
    entries: dict[tuple[int, int], int] = field(default_factory=dict)
    persistence: dict[int, int] = field(default_factory=dict)

    def count(self, from_class: int, to_class: int) -> int:
        return self.entries.get((from_class, to_class), 0)

    def to_json(self) -> dict:
        return {
            "entries": [{"from": i, "to": j, "count": n} for (i, j), n in sorted(self.entries.items())],
            "persistence": {str(i): n for i, n in sorted(self.persistence.items())},
        }

    @classmethod
    def from_json(cls, obj: dict) -> QuantumTable:
        return cls({(int(e["from"]), int(e["to"])): int(e["count"]) for e in obj["entries"]},
                   {int(k): int(v) for k, v in obj.get("persistence", {}).items()})


@dataclass(frozen=True)
class PotentialMap:
    from_class: int
    to_class: int
    grid: ContinuousGrid

    @property
    def defined(self) -> np.ndarray:
        return self.grid.cells != self.grid.header.nodata_value


def _sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _stack_drivers(drivers: Sequence[ContinuousGrid]) -> tuple[np.ndarray, np.ndarray]:
    """Flat ``(n_cells x k)`` driver values and a per-cell all-valid flag."""
    X = np.stack([d.cells.ravel() for d in drivers], axis=1)
    valid = np.all(np.stack([d.valid.ravel() for d in drivers], axis=1), axis=1)
    return X, valid


def build_transition_samples(grid_t0: CategoricalGrid, grid_t1: CategoricalGrid,
                             drivers: Sequence[ContinuousGrid], from_class: int, to_class: int,
                             mask: CategoricalGrid | None = None,
                             names: Sequence[str] | None = None) -> TransitionSamples:
    """One labeled sample per eligible ``from_class`` cell at t0.

    The label is 1 where the cell is ``to_class`` at t1. Cells that are
    masked, nodata at t1, or nodata in any driver are skipped.
    """
    if not drivers:
        raise LcmError("at least one driver is required")
    validate_alignment([grid_t0, grid_t1, mask, *drivers])
    names = tuple(names) if names is not None else tuple(f"driver{k}" for k in range(len(drivers)))
    if len(names) != len(drivers):
        raise LcmError("one name per driver required")
    X, dvalid = _stack_drivers(drivers)
    ok = (countable(grid_t0, mask) & grid_t1.valid).ravel() & dvalid
    ok &= grid_t0.cells.ravel() == from_class
    cells = np.flatnonzero(ok)
    if cells.size == 0:
        raise LcmError(f"zero eligible cells for transition {from_class}->{to_class}")
    y = (grid_t1.cells.ravel()[cells] == to_class).astype(float)
    if y.sum() == 0:
        warnings.warn(f"{from_class}->{to_class}: zero positive labels", SingleLabelWarning, stacklevel=2)
    elif y.sum() == y.size:
        warnings.warn(f"{from_class}->{to_class}: zero negative labels", SingleLabelWarning, stacklevel=2)
    return TransitionSamples(X[cells], y, names, cells)


def penalized_log_likelihood(w: np.ndarray, Z: np.ndarray, y: np.ndarray, l2: float) -> float:
    """Bernoulli log-likelihood minus ``l2/2 * |coef|^2``; ``w[0]`` is the unpenalized intercept."""
    eta = w[0] + Z @ w[1:]
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)) - 0.5 * l2 * np.dot(w[1:], w[1:]))


def penalized_gradient(w: np.ndarray, Z: np.ndarray, y: np.ndarray, l2: float) -> np.ndarray:
    r = y - _sigmoid(w[0] + Z @ w[1:])
    return np.concatenate(([r.sum()], Z.T @ r - l2 * w[1:]))


def _penalized_hessian(w, Z, y, l2):
    p = _sigmoid(w[0] + Z @ w[1:])
    s = p * (1 - p)
    Z1 = np.column_stack([np.ones(len(y)), Z])
    H = -(Z1.T * s) @ Z1
    H[1:, 1:] -= l2 * np.eye(Z.shape[1])
    return H


def fit_logistic(samples: TransitionSamples, l2: float = 1e-6, gtol: float = 1e-8,
                 max_iter: int = 500) -> LogisticModel:
    """L2-penalized logistic regression by damped Newton (IRLS).

    Features are z-standardized with the sample mean/stddev, which the
    returned model stores. The intercept is not penalized.
    """
    X = np.asarray(samples.features, dtype=float)
    y = np.asarray(samples.labels, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise LcmError("features must be n x k with one label per row")
    if X.shape[0] < 2:
        raise LcmError("need at least 2 samples")
    if l2 < 0:
        raise LcmError("l2 must be non-negative")
    if not np.all(np.isfinite(X)):
        raise LcmError("non-finite feature value")
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    if np.any(sd <= 0):
        bad = [samples.feature_names[k] for k in np.flatnonzero(sd <= 0)]
        raise LcmError(f"constant feature(s) {bad}")
    Z = (X - mu) / sd
    w = np.zeros(Z.shape[1] + 1)
    f = penalized_log_likelihood(w, Z, y, l2)
    for _ in range(max_iter):
        g = penalized_gradient(w, Z, y, l2)
        if np.max(np.abs(g)) < gtol:
            break
        H = _penalized_hessian(w, Z, y, l2)
        try:
            step = np.linalg.solve(-H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(-H, g, rcond=None)[0]
        if not np.dot(g, step) > 0:
            step = g
        if np.dot(g, step) < 1e-12 * max(1.0, abs(f)):
            # predicted gain is below the objective's float resolution: plain Newton step
            w = w + step
            f = penalized_log_likelihood(w, Z, y, l2)
            continue
        t = 1.0
        while t > 1e-12:
            w_new = w + t * step
            f_new = penalized_log_likelihood(w_new, Z, y, l2)
            if f_new >= f + 1e-4 * t * np.dot(g, step):
                break
            t *= 0.5
        else:
            # no ascent possible at machine precision
            break
        w, f = w_new, f_new
    else:
        warnings.warn("logistic fit hit max_iter before reaching gradient tolerance", RuntimeWarning,
                      stacklevel=2)
    return LogisticModel(tuple(samples.feature_names), float(w[0]), tuple(float(c) for c in w[1:]),
                         tuple(float(m) for m in mu), tuple(float(s) for s in sd))


def potential_map(submodel: TransitionSubModel, drivers: Sequence[ContinuousGrid],
                  grid_t0: CategoricalGrid, mask: CategoricalGrid | None = None) -> PotentialMap:
    """Transition probability on every eligible ``from_class`` cell; nodata elsewhere."""
    model = submodel.model
    if len(drivers) != len(model.feature_names):
        raise LcmError(
            f"feature count mismatch: model has {len(model.feature_names)}, got {len(drivers)} drivers"
        )
    validate_alignment([grid_t0, mask, *drivers])
    X, dvalid = _stack_drivers(drivers)
    ok = countable(grid_t0, mask).ravel() & dvalid & (grid_t0.cells.ravel() == submodel.from_class)
    out = np.full(X.shape[0], POTENTIAL_NODATA)
    if ok.any():
        out[ok] = model.predict_proba(X[ok])
    h = grid_t0.header
    header = type(h)(h.ncols, h.nrows, h.xllcorner, h.yllcorner, h.cellsize, POTENTIAL_NODATA)
    return PotentialMap(submodel.from_class, submodel.to_class,
                        ContinuousGrid(header, out.reshape(grid_t0.cells.shape)))


def compute_quantum(A: TransitionMatrix, grid_t0: CategoricalGrid,
                    mask: CategoricalGrid | None = None,
                    allowed: Iterable[tuple[int, int]] = DEFAULT_ALLOWED) -> QuantumTable:
    """Integer cell counts per allowed transition.

    Row i's raw quotas are ``a_ij * n_i``; mass of transitions not in
    ``allowed`` stays with persistence. Quotas plus persistence are
    integerized by largest remainder so they add up to ``n_i`` exactly
    (ties favor persistence, then ascending target code).
    """
    allowed = sorted({(int(i), int(j)) for i, j in allowed if i != j})
    ok = countable(grid_t0, mask)
    vals = grid_t0.cells[ok]
    present = set(np.unique(vals).tolist())
    uncovered = present - set(A.classes)
    if uncovered:
        raise LcmError(f"grid classes {sorted(uncovered)} missing from transition matrix")
    table = QuantumTable()
    for i in A.classes:
        n_i = int(np.count_nonzero(vals == i))
        targets = [j for (fi, j) in allowed if fi == i and j in A.classes]
        raw = np.array([A.prob(i, j) * n_i for j in targets])
        raw = np.concatenate(([max(n_i - raw.sum(), 0.0)], raw))
        base = np.floor(raw).astype(np.int64)
        short = n_i - int(base.sum())
        if short > 0:
            order = sorted(range(raw.size), key=lambda k: (-(raw[k] - base[k]), k))
            for k in order[:short]:
                base[k] += 1
        table.persistence[i] = int(base[0])
        for j, q in zip(targets, base[1:]):
            table.entries[(i, j)] = int(q)
    return table


def allocate_changes(grid_t0: CategoricalGrid, potentials: Sequence[PotentialMap],
                     quantum: QuantumTable, mask: CategoricalGrid | None = None) -> CategoricalGrid:
    """Place each transition's quota on its highest-potential eligible cells.

    All candidate (cell, transition) pairs are visited once in order of
    descending potential, ties by ascending (from, to) codes and then
    row-major cell index. A candidate is taken if its cell is still
    unassigned and its transition still has quota left, so a contested cell
    goes to the transition where it scores highest and no cell changes twice.
    When every transition out of a class shares the same eligible cells and
    the quotas sum to at most that many cells (as :func:`compute_quantum`
    guarantees without driver gaps), each transition receives exactly its
    quota.
    """
    validate_alignment([grid_t0, mask, *(p.grid for p in potentials)])
    by_pair = {(p.from_class, p.to_class): p for p in potentials}
    base_ok = countable(grid_t0, mask).ravel()
    t0 = grid_t0.cells.ravel()
    pots, froms, tos, idxs = [], [], [], []
    remaining: dict[tuple[int, int], int] = {}
    for pair, q in sorted(quantum.entries.items()):
        if q <= 0:
            continue
        if pair not in by_pair:
            raise LcmError(f"no potential map for transition {pair[0]}->{pair[1]} with quota {q}")
        pm = by_pair[pair]
        elig = np.flatnonzero(base_ok & pm.defined.ravel() & (t0 == pair[0]))
        if q > elig.size:
            warnings.warn(f"quota {q} for {pair[0]}->{pair[1]} exceeds {elig.size} eligible cells; capped",
                          QuotaWarning, stacklevel=2)
        remaining[pair] = min(q, int(elig.size))
        pots.append(pm.grid.cells.ravel()[elig])
        froms.append(np.full(elig.size, pair[0]))
        tos.append(np.full(elig.size, pair[1]))
        idxs.append(elig)
    out = t0.copy()
    if not pots:
        return grid_t0.with_cells(out.reshape(grid_t0.cells.shape))
    pot = np.concatenate(pots)
    fr = np.concatenate(froms)
    to = np.concatenate(tos)
    idx = np.concatenate(idxs)
    order = np.lexsort((idx, to, fr, -pot))
    taken = np.zeros(t0.size, dtype=bool)
    left = sum(remaining.values())
    for k in order:
        if left == 0:
            break
        c = idx[k]
        if taken[c]:
            continue
        pair = (int(fr[k]), int(to[k]))
        if remaining[pair] == 0:
            continue
        taken[c] = True
        out[c] = pair[1]
        remaining[pair] -= 1
        left -= 1
    return grid_t0.with_cells(out.reshape(grid_t0.cells.shape))


def fit_submodels(grid_t0: CategoricalGrid, grid_t1: CategoricalGrid,
                  drivers: Sequence[ContinuousGrid], names: Sequence[str],
                  allowed: Iterable[tuple[int, int]] = DEFAULT_ALLOWED,
                  mask: CategoricalGrid | None = None, l2: float = 1e-6) -> list[TransitionSubModel]:
    """Fit one logistic sub-model per allowed transition."""
    subs = []
    for i, j in sorted(set(allowed)):
        samples = build_transition_samples(grid_t0, grid_t1, drivers, i, j, mask, names)
        subs.append(TransitionSubModel(i, j, fit_logistic(samples, l2)))
    return subs


def predict(grid_t0: CategoricalGrid, A: TransitionMatrix, submodels: Sequence[TransitionSubModel],
            drivers: Sequence[ContinuousGrid], mask: CategoricalGrid | None = None
            ) -> tuple[CategoricalGrid, QuantumTable, list[PotentialMap]]:
    """Quantum from ``A``, potentials from the sub-models, then allocation."""
    allowed = [(s.from_class, s.to_class) for s in submodels]
    quantum = compute_quantum(A, grid_t0, mask, allowed)
    pots = [potential_map(s, drivers, grid_t0, mask) for s in submodels]
    return allocate_changes(grid_t0, pots, quantum, mask), quantum, pots


def parse_allowed(text: str | Sequence | None, legend: Mapping[int, str] | None = None
                  ) -> tuple[tuple[int, int], ...]:
    """Parse ``"1->3,1->2"`` (or class names like ``"V->S"``) into code pairs."""
    if text is None:
        return DEFAULT_ALLOWED
    if not isinstance(text, str):
        return tuple((int(a), int(b)) for a, b in text)
    names = {v: k for k, v in (legend or {}).items()}

    def code(tok):
        tok = tok.strip()
        if tok in names:
            return names[tok]
        try:
            return int(tok)
        except ValueError:
            raise GridError(f"unknown class {tok!r} in allowed transitions") from None

    pairs = []
    for part in text.split(","):
        a, _, b = part.partition("->")
        pairs.append((code(a), code(b)))
    return tuple(pairs)
