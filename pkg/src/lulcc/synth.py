"""Synthetic ground-truth scenarios.

A scenario is a stack of yearly land-cover grids evolved by known (possibly
per-epoch) transition matrices, driver rasters that steer where changes
land, and a factor table emitted from the yearly class mix. Every random
draw is keyed by ``(seed, stage, ...)`` through :class:`numpy.random.SeedSequence`
so stages never perturb each other's streams.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .factors import FactorTable, normalize_min_max, write_factor_table
from .grid import (CANONICAL_LEGEND, WATER, CategoricalGrid, ContinuousGrid, GridHeader,
                   write_ascii_grid)
from .hmm import GaussianHmmParams
from .markov import TransitionMatrix
from .suitability import proximity_transform, slope_from_dem, slope_suitability

# stage ids for the counter-based streams
_STAGE_HMM, _STAGE_INIT, _STAGE_EVOLVE, _STAGE_PLACE, _STAGE_FACTORS = range(5)

ROAD, OFF_ROAD = 1, 2


def _rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def sample_hmm_sequence(params: GaussianHmmParams, length: int, seed: int
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``(states, observations)``; states are indices into ``params.classes``."""
    if length < 1:
        raise ValueError("length must be >= 1")
    rng = _rng(seed, _STAGE_HMM)
    A = params.trans.probs
    n = params.n_states
    states = np.empty(length, dtype=np.int64)
    states[0] = rng.choice(n, p=params.pi)
    u = rng.random(length)
    cum = np.cumsum(A, axis=1)
    for t in range(1, length):
        row = cum[states[t - 1]]
        states[t] = min(int(np.searchsorted(row, u[t] * row[-1], side="right")), n - 1)
    noise = rng.standard_normal((length, params.dim))
    obs = params.means[states] + noise * np.sqrt(params.vars[states])
    return states, obs


@dataclass
class ScenarioConfig:
    epochs: list[list[list[float]]]
    emission_means: list[list[float]]
    emission_vars: list[list[float]]
    nrows: int = 64
    ncols: int = 64
    classes: list[int] = field(default_factory=lambda: [1, 2, 3])
    epoch_lengths: list[int] | None = None
    initial_mix: list[float] | None = None
    start_year: int = 2001
    years: int = 14
    repeat_factor: int = 6
    factor_names: list[str] | None = None
    factor_noise: float = 0.1
    slope_amplitude: float = 300.0
    road_rows: list[int] = field(default_factory=list)
    road_cols: list[int] = field(default_factory=list)
    water_cols: list[int] = field(default_factory=list)
    placement_noise: float = 0.15
    cellsize: float = 30.0
    seed: int = 0

    def __post_init__(self):
        n = len(self.classes)
        if self.years < 2:
            raise ValueError("a scenario needs at least 2 years")
        if not self.epochs:
            raise ValueError("at least one epoch matrix is required")
        for m in self.epochs:
            TransitionMatrix(tuple(self.classes), np.array(m))
        if self.epoch_lengths is None:
            steps = self.years - 1
            k = len(self.epochs)
            self.epoch_lengths = [steps // k + (1 if e < steps % k else 0) for e in range(k)]
        if len(self.epoch_lengths) != len(self.epochs) or sum(self.epoch_lengths) != self.years - 1:
            raise ValueError("epoch_lengths must give one length per epoch summing to years - 1")
        means = np.asarray(self.emission_means, dtype=float)
        var = np.asarray(self.emission_vars, dtype=float)
        if means.ndim != 2 or means.shape[0] != n or var.shape != means.shape:
            raise ValueError("emission means/vars must be N x D")
        if np.any(var <= 0):
            raise ValueError("emission variances must be positive")
        if self.initial_mix is None:
            self.initial_mix = [1.0 / n] * n
        mix = np.asarray(self.initial_mix, dtype=float)
        if mix.shape != (n,) or np.any(mix < 0) or abs(mix.sum() - 1) > 1e-9:
            raise ValueError("initial_mix must be a probability vector over classes")
        if self.factor_names is None:
            self.factor_names = [f"factor{d + 1}" for d in range(means.shape[1])]
        if len(self.factor_names) != means.shape[1]:
            raise ValueError("one factor name per emission dimension required")
        if self.nrows < 2 or self.ncols < 2:
            raise ValueError("grid must be at least 2x2")

    @property
    def year_list(self) -> list[int]:
        return list(range(self.start_year, self.start_year + self.years))

    def epoch_of_step(self, step: int) -> int:
        """Epoch index driving the transition from year ``step`` to ``step + 1``."""
        bounds = np.cumsum(self.epoch_lengths)
        return int(np.searchsorted(bounds, step, side="right"))

    def matrices(self) -> list[TransitionMatrix]:
        return [TransitionMatrix(tuple(self.classes), np.array(m)) for m in self.epochs]

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def load(cls, path: str | Path) -> ScenarioConfig:
        return cls(**json.loads(Path(path).read_text()))


@dataclass(eq=False)
class ScenarioBundle:
    config: ScenarioConfig
    grids: dict[int, CategoricalGrid]
    factors: FactorTable
    dem: ContinuousGrid
    slope: ContinuousGrid
    suitability: ContinuousGrid
    roads: CategoricalGrid
    proximity: ContinuousGrid
    water_mask: CategoricalGrid
    true_params: list[GaussianHmmParams]

    @property
    def drivers(self) -> list[ContinuousGrid]:
        """Default logistic-regression drivers: slope suitability, road proximity."""
        return [self.suitability, self.proximity]

    driver_names = ("slope_suitability", "road_proximity")

    def truth_json(self) -> dict:
        return {
            "config": self.config.to_json(),
            "epochs": [{"length": n, "params": p.to_json()}
                       for n, p in zip(self.config.epoch_lengths, self.true_params)],
        }

    def write(self, outdir: str | Path) -> dict[str, str]:
        """Write grids, factor CSV and truth JSON; return a manifest of relative paths."""
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        manifest: dict = {"grids": {}}
        for year, g in sorted(self.grids.items()):
            name = f"landcover_{year}.asc"
            write_ascii_grid(g, out / name)
            manifest["grids"][str(year)] = name
        for key, g in (("dem", self.dem), ("slope", self.slope), ("slope_suitability", self.suitability),
                       ("roads", self.roads), ("road_proximity", self.proximity),
                       ("water_mask", self.water_mask)):
            write_ascii_grid(g, out / f"{key}.asc")
            manifest[key] = f"{key}.asc"
        write_factor_table(self.factors, out / "factors.csv")
        manifest["factors"] = "factors.csv"
        (out / "truth.json").write_text(json.dumps(self.truth_json(), indent=2))
        manifest["truth"] = "truth.json"
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
        return manifest


def _drivers(cfg: ScenarioConfig, header: GridHeader):
    r = np.arange(cfg.nrows)[:, None] / max(cfg.nrows - 1, 1)
    c = np.arange(cfg.ncols)[None, :] / max(cfg.ncols - 1, 1)
    # terrain steepens toward the bottom rows, with gentle cross-wise undulation
    z = cfg.slope_amplitude * (r ** 2 + 0.15 * np.sin(2 * np.pi * 2 * c) * r)
    dem = ContinuousGrid(header, np.broadcast_to(z, header.shape))
    slope = slope_from_dem(dem)
    suit = slope_suitability(slope)
    road_cells = np.full(header.shape, OFF_ROAD)
    for rr in cfg.road_rows:
        road_cells[rr, :] = ROAD
    for cc in cfg.road_cols:
        road_cells[:, cc] = ROAD
    if not cfg.road_rows and not cfg.road_cols:
        road_cells[cfg.nrows // 2, :] = ROAD
    roads = CategoricalGrid(header, road_cells, {ROAD: "road", OFF_ROAD: "off-road"})
    prox = proximity_transform(roads, ROAD)
    return dem, slope, suit, roads, prox


def _target_scores(cfg: ScenarioConfig, suit: np.ndarray, prox: np.ndarray) -> dict[int, np.ndarray]:
    """Per target class, a [0, 1] preference score for receiving changes."""
    s = (suit - suit.min()) / max(suit.max() - suit.min(), 1e-12)
    p = 1.0 - prox / max(prox.max(), 1e-12)
    urban = 0.5 * s + 0.5 * p
    scores = {}
    names = {k: CANONICAL_LEGEND.get(k) for k in cfg.classes}
    for k in cfg.classes:
        if names[k] == "I":
            scores[k] = urban
        elif names[k] == "V":
            scores[k] = 1.0 - urban
        else:
            scores[k] = 0.5 * s + 0.5 * (1.0 - p)
    return scores


def generate_scenario(config: ScenarioConfig) -> ScenarioBundle:
    cfg = config
    classes = np.asarray(cfg.classes)
    n = classes.size
    header = GridHeader(cfg.ncols, cfg.nrows, 0.0, 0.0, cfg.cellsize, -9999.0)
    dem, slope, suit, roads, prox = _drivers(cfg, header)
    scores = _target_scores(cfg, suit.cells.ravel(), prox.cells.ravel())

    water = np.zeros(header.shape, dtype=bool)
    for cc in cfg.water_cols:
        water[:, cc] = True
    water = water.ravel()
    mask_cells = np.where(water, WATER, 1).reshape(header.shape)
    water_mask = CategoricalGrid(header, mask_cells, {1: "land", WATER: "Water"})

    legend = {int(k): CANONICAL_LEGEND.get(int(k), str(k)) for k in cfg.classes}
    legend[WATER] = "Water"
    rng0 = _rng(cfg.seed, _STAGE_INIT)
    cur = classes[rng0.choice(n, size=water.size, p=np.asarray(cfg.initial_mix))]
    cur[water] = WATER
    years = cfg.year_list
    grids = {years[0]: CategoricalGrid(header, cur.reshape(header.shape), legend)}
    mats = cfg.matrices()
    land = np.flatnonzero(~water)

    for step in range(cfg.years - 1):
        A = mats[cfg.epoch_of_step(step)].probs
        rng_counts = _rng(cfg.seed, _STAGE_EVOLVE, step)
        rng_place = _rng(cfg.seed, _STAGE_PLACE, step)
        nxt = cur.copy()
        for a, code in enumerate(classes):
            members = land[cur[land] == code]
            if members.size == 0:
                continue
            counts = rng_counts.multinomial(members.size, A[a])
            free = np.ones(members.size, dtype=bool)
            for b, target in enumerate(classes):
                if b == a or counts[b] == 0:
                    continue
                key = scores[int(target)][members] + cfg.placement_noise * rng_place.standard_normal(members.size)
                key[~free] = -np.inf
                pick = np.argsort(-key, kind="stable")[:counts[b]]
                free[pick] = False
                nxt[members[pick]] = target
        cur = nxt
        grids[years[step + 1]] = CategoricalGrid(header, cur.reshape(header.shape), legend)

    means = np.asarray(cfg.emission_means, dtype=float)
    var = np.asarray(cfg.emission_vars, dtype=float)
    rng_f = _rng(cfg.seed, _STAGE_FACTORS)
    rows = []
    for year in years:
        vals = grids[year].cells.ravel()[land]
        freq = np.array([np.count_nonzero(vals == c) for c in classes], dtype=float) / max(land.size, 1)
        mu = freq @ means
        sd = cfg.factor_noise * np.sqrt(freq @ var)
        rows.append(mu + sd * rng_f.standard_normal(means.shape[1]))
    factors = normalize_min_max(FactorTable(tuple(years), tuple(cfg.factor_names), np.array(rows)))

    pi = np.asarray(cfg.initial_mix, dtype=float)
    true_params = [GaussianHmmParams(tuple(cfg.classes), pi, m, means, var) for m in mats]
    return ScenarioBundle(cfg, grids, factors, dem, slope, suit, roads, prox, water_mask, true_params)


def bundled_config_path() -> Path:
    return Path(__file__).with_name("data") / "scenario_nonstationary.json"


def bundled_scenario_config() -> ScenarioConfig:
    """The fixed-seed non-stationary scenario (urban persistence 0.90 -> 0.96)."""
    return ScenarioConfig.load(bundled_config_path())
