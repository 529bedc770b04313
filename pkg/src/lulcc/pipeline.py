"""End-to-end MC-LR and HMM-LR runs.

Both integrated models share the logistic sub-models fitted on the
(first year, calibration year) grid pair and predict the target year from
the calibration-year grid. They differ only in the transition matrix that
sets the quantum:

* MC-LR extrapolates the calibration-period Markov matrix to the prediction
  period (matrix power for integer period ratios, elementwise power
  otherwise);
* HMM-LR trains a Gaussian HMM on the replicated factor sequence, starting
  from the first-year-pair Markov matrix and first-year class frequencies,
  and uses the learned transition matrix directly.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import factors as fac
from . import hmm, lcm, markov, validate
from .grid import (I, CategoricalGrid, GridError, class_frequencies, read_ascii_grid,
                   validate_alignment, write_ascii_grid)
from .suitability import cramers_v

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    grids: dict[str, str]
    factors: str
    drivers: dict[str, str]
    output_dir: str
    water_mask: str | None = None
    classes: list[int] = field(default_factory=lambda: [1, 2, 3])
    calibration_year: int | None = None
    target_year: int | None = None
    repeat_factor: int = 6
    max_iter: int = 50000
    tol: float = 0.01
    l2: float = 1e-6
    bins: int = 10
    allowed: list[list[int]] | None = None
    urban_code: int = I
    seed: int = 0
    base_dir: str | None = None

    @classmethod
    def load(cls, path: str | Path, **overrides) -> PipelineConfig:
        data = json.loads(Path(path).read_text())
        data.setdefault("base_dir", str(Path(path).resolve().parent))
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)

    def resolve(self, p: str) -> Path:
        path = Path(p)
        if not path.is_absolute() and self.base_dir:
            path = Path(self.base_dir) / path
        return path

    def check_inputs(self) -> None:
        paths = [*self.grids.values(), self.factors, *self.drivers.values()]
        if self.water_mask:
            paths.append(self.water_mask)
        missing = [p for p in paths if not self.resolve(p).exists()]
        if missing:
            raise FileNotFoundError(f"missing input file(s): {missing}")

    def digest(self) -> str:
        """Hash of the run-defining fields (paths relative as given, output dir excluded)."""
        d = asdict(self)
        d.pop("output_dir")
        d.pop("base_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True))


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Run both integrated models; write artifacts and return the comparison report."""
    cfg.check_inputs()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    classes = list(cfg.classes)

    grids = {int(y): read_ascii_grid(cfg.resolve(p), "categorical") for y, p in cfg.grids.items()}
    years = sorted(grids)
    if len(years) < 3:
        raise GridError("pipeline needs at least three land-cover years")
    first = years[0]
    target = cfg.target_year if cfg.target_year is not None else years[-1]
    calib = cfg.calibration_year if cfg.calibration_year is not None else years[(len(years) - 1) // 2]
    if not first < calib < target or calib not in grids or target not in grids:
        raise GridError(f"need first < calibration < target years present in grids, got "
                        f"{first}, {calib}, {target}")
    second = years[1]
    mask = read_ascii_grid(cfg.resolve(cfg.water_mask), "categorical") if cfg.water_mask else None
    names = sorted(cfg.drivers)
    drivers = [read_ascii_grid(cfg.resolve(cfg.drivers[n]), "continuous") for n in names]
    validate_alignment([*grids.values(), mask, *drivers])
    allowed = lcm.parse_allowed(cfg.allowed)

    # temporal models
    mc_first = markov.estimate_transition_matrix(grids[first], grids[second], classes, mask)
    mc_base = markov.estimate_transition_matrix(grids[first], grids[calib], classes, mask)
    ratio = (target - calib) / (calib - first)
    mc_pred = markov.extrapolate(mc_base, ratio)

    table = fac.normalize_min_max(fac.load_factor_table(cfg.resolve(cfg.factors)))
    obs = fac.build_observation_sequence(table, cfg.repeat_factor)
    freq = class_frequencies(grids[first], classes, mask)
    init = hmm.init_params(mc_first, freq, obs, cfg.seed)
    trained, trace = hmm.baum_welch_train(init, obs, cfg.max_iter, cfg.tol)
    hmm_pred = hmm.learned_quantum(trained)

    # spatial sub-models, shared by both integrated models
    subs = lcm.fit_submodels(grids[first], grids[calib], drivers, names, allowed, mask, cfg.l2)
    sub_dir = out / "submodels"
    sub_dir.mkdir(exist_ok=True)
    for s in subs:
        s.save(sub_dir / f"submodel_{s.from_class}_to_{s.to_class}.json")

    cramers = {n: cramers_v(d, grids[calib], cfg.bins, mask) for n, d in zip(names, drivers)}

    mc_first.save(out / "mc_first_pair.json")
    mc_base.save(out / "mc_calibration.json")
    mc_pred.save(out / "mc_extrapolated.json")
    init.save(out / "hmm_init.json")
    trained.save(out / "hmm_params.json")
    _dump(trace.to_json(), out / "hmm_trace.json")

    actual = grids[target]
    results = {}
    for tag, A in (("mc", mc_pred), ("hmm", hmm_pred)):
        predicted, quantum, _ = lcm.predict(grids[calib], A, subs, drivers, mask)
        write_ascii_grid(predicted, out / f"predicted_{tag}.asc")
        _dump(quantum.to_json(), out / f"quantum_{tag}.json")
        rep = validate.validation_report(actual, predicted, classes, cfg.urban_code, mask, cramers)
        rep["config_hash"] = cfg.digest()
        rep["seed"] = cfg.seed
        _dump(rep, out / f"validation_{tag}.json")
        validate.render_overlay(actual, predicted, cfg.urban_code, out / f"overlay_{tag}.ppm", mask)
        results[tag] = rep

    artifacts = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "comparison.json")
    report = {
        "config_hash": cfg.digest(),
        "seed": cfg.seed,
        "years": {"first": first, "calibration": calib, "target": target},
        "period_ratio": ratio,
        "hmm": {"iterations": trace.iterations_run, "converged": trace.converged,
                "final_log_likelihood": trace.log_likelihoods[-1] if trace.log_likelihoods else None},
        "overall_accuracy": {"mc_lr": results["mc"]["overall_accuracy"],
                             "hmm_lr": results["hmm"]["overall_accuracy"]},
        "precision_recall": {"mc_lr": results["mc"]["precision_recall"],
                             "hmm_lr": results["hmm"]["precision_recall"]},
        "urban_persistence": {"mc_lr": mc_pred.prob(cfg.urban_code, cfg.urban_code),
                              "hmm_lr": hmm_pred.prob(cfg.urban_code, cfg.urban_code)},
        "cramers_v": cramers,
        "artifacts": {str(p.relative_to(out)): sha256_file(p) for p in artifacts},
    }
    _dump(report, out / "comparison.json")
    log.info("MC-LR accuracy %.4f, HMM-LR accuracy %.4f",
             report["overall_accuracy"]["mc_lr"], report["overall_accuracy"]["hmm_lr"])
    return report


def config_for_bundle(bundle_dir: str | Path, manifest: dict, output_dir: str | Path,
                      seed: int = 0, repeat_factor: int = 6) -> PipelineConfig:
    """Pipeline config pointing at a scenario directory written by ``ScenarioBundle.write``."""
    return PipelineConfig(
        grids=dict(manifest["grids"]),
        factors=manifest["factors"],
        drivers={"road_proximity": manifest["road_proximity"],
                 "slope_suitability": manifest["slope_suitability"]},
        water_mask=manifest["water_mask"],
        output_dir=str(output_dir),
        seed=seed,
        repeat_factor=repeat_factor,
        base_dir=str(Path(bundle_dir).resolve()),
    )


def run_bundled(outdir: str | Path, **overrides) -> dict:
    """Generate the bundled non-stationary scenario under ``outdir/scenario`` and run the pipeline."""
    from .synth import bundled_scenario_config, generate_scenario

    scen = bundled_scenario_config()
    bundle = generate_scenario(scen)
    outdir = Path(outdir)
    manifest = bundle.write(outdir / "scenario")
    cfg = config_for_bundle(outdir / "scenario", manifest, outdir / "run",
                            repeat_factor=scen.repeat_factor)
    for k, v in overrides.items():
        if v is not None:
            setattr(cfg, k, v)
    cfg_path = outdir / "pipeline_config.json"
    cfg_path.write_text(json.dumps(asdict(cfg), indent=2))
    return run_pipeline(cfg)
