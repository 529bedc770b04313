"""Gaussian-emission hidden Markov model over temporal factor sequences.

Hidden states are land-cover classes; each state emits a D-dimensional
factor vector from a diagonal Gaussian. Training is Baum-Welch (EM) starting
from a Markov-chain transition matrix, and the learned transition matrix is
what the spatial allocation consumes as its quantum model.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .factors import ObservationSequence
from .markov import TransitionMatrix

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-6
PROB_FLOOR = 1e-6
_LOG_2PI = np.log(2 * np.pi)


class HmmError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GaussianHmmParams:
    classes: tuple[int, ...]
    pi: np.ndarray
    trans: TransitionMatrix
    means: np.ndarray
    vars: np.ndarray

    def __post_init__(self):
        classes = tuple(int(c) for c in self.classes)
        object.__setattr__(self, "classes", classes)
        pi = np.array(self.pi, dtype=float, copy=True)
        means = np.atleast_2d(np.array(self.means, dtype=float, copy=True))
        var = np.atleast_2d(np.array(self.vars, dtype=float, copy=True))
        n = len(classes)
        if pi.shape != (n,) or means.shape[0] != n or var.shape != means.shape:
            raise HmmError(
                f"dimension mismatch: {n} classes, pi {pi.shape}, means {means.shape}, vars {var.shape}"
            )
        if tuple(self.trans.classes) != classes:
            raise HmmError("transition matrix classes differ from params classes")
        if np.any(pi < 0) or abs(pi.sum() - 1) > 1e-9:
            raise HmmError(f"pi must be a probability vector, got {pi}")
        if not (np.all(np.isfinite(means)) and np.all(np.isfinite(var))):
            raise HmmError("non-finite emission parameters")
        if np.any(var < VAR_FLOOR * (1 - 1e-12)):
            raise HmmError(f"variances below floor {VAR_FLOOR}")
        for a in (pi, means, var):
            a.setflags(write=False)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "vars", var)

    @property
    def n_states(self) -> int:
        return len(self.classes)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def to_json(self) -> dict:
        return {
            "classes": list(self.classes),
            "pi": self.pi.tolist(),
            "trans": self.trans.probs.tolist(),
            "means": self.means.tolist(),
            "vars": self.vars.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> GaussianHmmParams:
        classes = tuple(obj["classes"])
        return cls(classes, np.array(obj["pi"]), TransitionMatrix(classes, np.array(obj["trans"])),
                   np.array(obj["means"]), np.array(obj["vars"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> GaussianHmmParams:
        return cls.from_json(json.loads(Path(path).read_text()))

    def __eq__(self, other):
        if not isinstance(other, GaussianHmmParams):
            return NotImplemented
        return (self.classes == other.classes and self.trans == other.trans
                and np.array_equal(self.pi, other.pi) and np.array_equal(self.means, other.means)
                and np.array_equal(self.vars, other.vars))


@dataclass
class TrainingTrace:
    log_likelihoods: list[float] = field(default_factory=list)
    iterations_run: int = 0
    converged: bool = False

    def to_json(self) -> list[float]:
        return list(self.log_likelihoods)


def _floor_renorm(p: np.ndarray) -> np.ndarray:
    p = np.maximum(np.asarray(p, dtype=float), PROB_FLOOR)
    return p / p.sum(axis=-1, keepdims=True)


def kmeans(X: np.ndarray, k: int, seed: int, n_iter: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Seeded k-means++ / Lloyd. Returns ``(centroids, labels)``.

    Empty clusters keep their previous centroid, so duplicated observations
    (fewer distinct points than ``k``) are handled without error.
    """
    X = np.asarray(X, dtype=float)
    rng = np.random.default_rng(seed)
    n = X.shape[0]
    centroids = np.empty((k, X.shape[1]))
    centroids[0] = X[rng.integers(n)]
    d2 = np.sum((X - centroids[0]) ** 2, axis=1)
    for c in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centroids[c] = X[idx]
        d2 = np.minimum(d2, np.sum((X - centroids[c]) ** 2, axis=1))
    labels = np.full(n, -1)
    for _ in range(n_iter):
        dist = np.sum((X[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        new = np.argmin(dist, axis=1)
        if np.array_equal(new, labels):
            break
        labels = new
        for c in range(k):
            members = X[labels == c]
            if len(members):
                centroids[c] = members.mean(axis=0)
    return centroids, labels


def init_params(mc_trans: TransitionMatrix, initial_freq: Sequence[float],
                obs: ObservationSequence, seed: int = 0) -> GaussianHmmParams:
    """Initial parameters: MC transitions, class-frequency priors, k-means means.

    Centroids are ranked by descending cluster size and handed to the classes
    in their listed order. Every state starts with the global per-dimension
    sample variance.
    """
    n = len(mc_trans.classes)
    freq = np.asarray(initial_freq, dtype=float)
    if freq.shape != (n,):
        raise HmmError(f"initial_freq has length {freq.size}, expected {n}")
    X = obs.observations
    if X.shape[0] == 0:
        raise HmmError("empty observation sequence")
    centroids, labels = kmeans(X, n, seed)
    sizes = np.bincount(labels, minlength=n)
    order = np.argsort(-sizes, kind="stable")
    var = np.maximum(X.var(axis=0), VAR_FLOOR)
    return GaussianHmmParams(
        classes=mc_trans.classes,
        pi=_floor_renorm(freq),
        trans=TransitionMatrix(mc_trans.classes, _floor_renorm(mc_trans.probs)),
        means=centroids[order],
        vars=np.tile(var, (n, 1)),
    )


def log_emission_density(params: GaussianHmmParams, state: int, x) -> float:
    x = np.asarray(x, dtype=float)
    m, v = params.means[state], params.vars[state]
    return float(np.sum(-0.5 * np.log(2 * np.pi * v) - (x - m) ** 2 / (2 * v)))


def log_emissions(params: GaussianHmmParams, X: np.ndarray) -> np.ndarray:
    """T x N matrix of per-state log densities."""
    X = np.asarray(X, dtype=float)
    v = params.vars[None, :, :]
    diff = X[:, None, :] - params.means[None, :, :]
    return np.sum(-0.5 * (_LOG_2PI + np.log(v)) - diff ** 2 / (2 * v), axis=2)


def _forward_backward_scaled(pi, A, logb):
    T, N = logb.shape
    shift = logb.max(axis=1)
    b = np.exp(logb - shift[:, None])
    alpha = np.empty((T, N))
    c = np.empty(T)
    a = pi * b[0]
    c[0] = a.sum()
    if not c[0] > 0:
        return None
    alpha[0] = a / c[0]
    for t in range(1, T):
        a = (alpha[t - 1] @ A) * b[t]
        c[t] = a.sum()
        if not c[t] > 0:
            return None
        alpha[t] = a / c[t]
    beta = np.empty((T, N))
    beta[-1] = 1.0
    for t in range(T - 2, -1, -1):
        beta[t] = A @ (b[t + 1] * beta[t + 1]) / c[t + 1]
    loglik = float(np.sum(np.log(c)) + np.sum(shift))
    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)
    xi = alpha[:-1, :, None] * A[None, :, :] * (b[1:] * beta[1:])[:, None, :]
    xi /= c[1:, None, None]
    return loglik, gamma, xi


def _logsumexp(x, axis):
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(x - m), axis=axis))


def _forward_backward_log(pi, A, logb):
    T, N = logb.shape
    with np.errstate(divide="ignore"):
        lpi, lA = np.log(pi), np.log(A)
    la = np.empty((T, N))
    la[0] = lpi + logb[0]
    for t in range(1, T):
        la[t] = logb[t] + _logsumexp(la[t - 1][:, None] + lA, axis=0)
    lb = np.zeros((T, N))
    for t in range(T - 2, -1, -1):
        lb[t] = _logsumexp(lA + (logb[t + 1] + lb[t + 1])[None, :], axis=1)
    loglik = float(_logsumexp(la[-1], axis=0))
    lg = la + lb
    gamma = np.exp(lg - _logsumexp(lg, axis=1)[:, None])
    lx = la[:-1, :, None] + lA[None] + (logb[1:] + lb[1:])[:, None, :]
    xi = np.exp(lx - loglik)
    return loglik, gamma, xi


def forward_backward(params: GaussianHmmParams, obs: ObservationSequence | np.ndarray):
    """E-step quantities ``(log_likelihood, gamma, xi)``.

    Uses per-step normalization constants; if a normalizer underflows to zero
    the whole pass is redone in log space.
    """
    X = obs.observations if isinstance(obs, ObservationSequence) else np.atleast_2d(obs)
    if X.ndim != 2 or X.shape[0] == 0:
        raise HmmError("observation sequence must be a non-empty T x D array")
    if X.shape[1] != params.dim:
        raise HmmError(f"observation dimension {X.shape[1]} != model dimension {params.dim}")
    if np.any(np.isnan(X)):
        raise HmmError("NaN observation")
    logb = log_emissions(params, X)
    A = params.trans.probs
    res = _forward_backward_scaled(params.pi, A, logb)
    if res is None:
        res = _forward_backward_log(params.pi, A, logb)
    loglik, gamma, xi = res
    if xi.shape[0]:
        xi = xi / xi.sum(axis=(1, 2), keepdims=True)
    return loglik, gamma, xi


def _m_step(params: GaussianHmmParams, X: np.ndarray, gamma: np.ndarray, xi: np.ndarray):
    pi = gamma[0] / gamma[0].sum()

    A = params.trans.probs.copy()
    num = xi.sum(axis=0)
    den = num.sum(axis=1)
    live = den > 0
    A[live] = num[live] / den[live, None]

    w = gamma.sum(axis=0)
    means = params.means.copy()
    var = params.vars.copy()
    for k in np.flatnonzero(w > 0):
        g = gamma[:, k]
        means[k] = g @ X / w[k]
        var[k] = g @ (X - means[k]) ** 2 / w[k]
    var = np.maximum(var, VAR_FLOOR)
    return GaussianHmmParams(params.classes, pi, TransitionMatrix(params.classes, A), means, var)


def baum_welch_train(params: GaussianHmmParams, obs: ObservationSequence | np.ndarray,
                     max_iter: int = 50000, tol: float = 0.01
                     ) -> tuple[GaussianHmmParams, TrainingTrace]:
    """Baum-Welch re-estimation of priors, transitions, means and variances.

    Stops once the log-likelihood improves by less than ``tol`` between two
    iterations, or after ``max_iter`` E-steps. Variances are floored at
    ``VAR_FLOOR`` in every M-step.
    """
    X = obs.observations if isinstance(obs, ObservationSequence) else np.atleast_2d(obs)
    if X.shape[0] < 2:
        raise HmmError("training needs at least 2 observations")
    trace = TrainingTrace()
    current = params
    for it in range(max_iter):
        loglik, gamma, xi = forward_backward(current, X)
        if not np.isfinite(loglik) or np.any(np.isnan(gamma)):
            raise HmmError(f"NaN encountered at iteration {it}")
        trace.log_likelihoods.append(loglik)
        trace.iterations_run = it + 1
        if it > 0 and loglik - trace.log_likelihoods[-2] < tol:
            trace.converged = True
            break
        try:
            current = _m_step(current, X, gamma, xi)
        except ValueError as exc:
            raise HmmError(f"NaN encountered at iteration {it}: {exc}") from None
    log.debug("baum-welch: %d iterations, converged=%s", trace.iterations_run, trace.converged)
    return current, trace


def learned_quantum(params: GaussianHmmParams) -> TransitionMatrix:
    """The learned transition matrix, as consumed by quantum computation."""
    return TransitionMatrix(params.classes, params.trans.probs.copy())


def match_states(estimated: np.ndarray, reference: np.ndarray) -> tuple[int, ...]:
    """Permutation ``perm`` minimizing ``sum |estimated[perm[k]] - reference[k]|``.

    Used to line up learned states with generating states before comparison.
    """
    from itertools import permutations

    n = reference.shape[0]
    best, best_cost = None, np.inf
    for perm in permutations(range(n)):
        cost = float(np.abs(estimated[list(perm)] - reference).sum())
        if cost < best_cost:
            best, best_cost = perm, cost
    return tuple(best)
