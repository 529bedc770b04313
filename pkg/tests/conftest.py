import itertools
from collections import deque

import numpy as np
import pytest

from lulcc.grid import CANONICAL_LEGEND, CategoricalGrid, ContinuousGrid, GridHeader


def cat(cells, cellsize=30.0, legend=None):
    cells = np.asarray(cells)
    h = GridHeader(cells.shape[1], cells.shape[0], 0.0, 0.0, cellsize, -9999.0)
    return CategoricalGrid(h, cells, legend or CANONICAL_LEGEND)


def cont(cells, cellsize=30.0, nodata=-9999.0):
    cells = np.asarray(cells, dtype=float)
    h = GridHeader(cells.shape[1], cells.shape[0], 0.0, 0.0, cellsize, nodata)
    return ContinuousGrid(h, cells)


def brute_force_loglik(pi, A, logb):
    """log P(X) by summing over every hidden path (independent of the recursion)."""
    T, N = logb.shape
    terms = []
    for path in itertools.product(range(N), repeat=T):
        s = np.log(pi[path[0]]) + logb[0, path[0]]
        for t in range(1, T):
            s += np.log(A[path[t - 1], path[t]]) + logb[t, path[t]]
        terms.append(s)
    terms = np.array(terms)
    m = terms[np.isfinite(terms)].max()
    return m + np.log(np.sum(np.exp(terms - m)))


def brute_force_crosstab(a, b, classes):
    n = len(classes)
    out = np.zeros((n, n), dtype=np.int64)
    for x, y in zip(np.ravel(a), np.ravel(b)):
        out[classes.index(x), classes.index(y)] += 1
    return out


def flood_fill_components(binary):
    """Connected components with 8-neighborhood by explicit BFS; returns sorted areas."""
    binary = np.asarray(binary, dtype=bool)
    seen = np.zeros_like(binary)
    areas = []
    nr, nc = binary.shape
    for r in range(nr):
        for c in range(nc):
            if binary[r, c] and not seen[r, c]:
                q = deque([(r, c)])
                seen[r, c] = True
                area = 0
                while q:
                    y, x = q.popleft()
                    area += 1
                    for dy in (-1, 0, 1):
                        for dx in (-1, 0, 1):
                            yy, xx = y + dy, x + dx
                            if 0 <= yy < nr and 0 <= xx < nc and binary[yy, xx] and not seen[yy, xx]:
                                seen[yy, xx] = True
                                q.append((yy, xx))
                areas.append(area)
    return sorted(areas)


def random_stochastic(rng, n, alpha=1.0):
    return rng.dirichlet(np.full(n, alpha), size=n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_allocation_instance(rng, nrows=None, ncols=None):
    """Random t0 grid, water mask, transition matrix and k/1024 potentials.

    Every transition out of a class sees the same eligible cells, which is
    the setting where quotas are met exactly.
    """
    from lulcc.lcm import DEFAULT_ALLOWED, POTENTIAL_NODATA, PotentialMap, compute_quantum
    from lulcc.markov import TransitionMatrix

    nr = nrows or int(rng.integers(2, 13))
    nc = ncols or int(rng.integers(2, 13))
    t0_cells = rng.choice([1, 2, 3, 4], size=(nr, nc), p=[0.4, 0.2, 0.3, 0.1])
    t0 = cat(t0_cells)
    mask = cat(np.where(t0_cells == 4, 4, 1))
    A = TransitionMatrix((1, 2, 3), random_stochastic(rng, 3, alpha=float(rng.uniform(0.3, 3))))
    quantum = compute_quantum(A, t0, mask, DEFAULT_ALLOWED)
    pots = []
    for i, j in DEFAULT_ALLOWED:
        vals = rng.integers(0, 1024, size=(nr, nc)) / 1024.0
        vals[t0_cells != i] = POTENTIAL_NODATA
        pots.append(PotentialMap(i, j, cont(vals, nodata=POTENTIAL_NODATA)))
    return t0, mask, quantum, pots


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
