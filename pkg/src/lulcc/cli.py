"""Command-line entry point: ``lulcc <subcommand> ...``.

Failures exit 1 with a single JSON line on stderr
(``{"error": ..., "type": ..., "subcommand": ...}``); unknown subcommands and
bad flags exit 2 with usage text.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import factors as fac
from . import hmm, lcm, markov, radiometry, synth, validate
from .grid import class_frequencies, read_ascii_grid, write_ascii_grid
from .pipeline import PipelineConfig, run_bundled, run_pipeline


def _ints(s: str) -> list[int]:
    return [int(x) for x in s.split(",") if x.strip()]


def _floats(s: str) -> list[float]:
    return [float(x) for x in s.split(",") if x.strip()]


def _named(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items or []:
        name, sep, path = item.partition("=")
        if not sep:
            raise ValueError(f"expected NAME=PATH, got {item!r}")
        out[name] = path
    return out


def _grid(path, kind="categorical"):
    return read_ascii_grid(path, kind) if path else None


def _write_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True))


def cmd_mc_estimate(a):
    A = markov.estimate_transition_matrix(_grid(a.t0), _grid(a.t1), _ints(a.classes), _grid(a.mask))
    A.save(a.out)


def cmd_mc_extrapolate(a):
    A = markov.TransitionMatrix.load(a.matrix)
    if a.k is not None:
        out = markov.extrapolate_matrix_power(A, a.k)
    else:
        out = markov.extrapolate_elementwise_power(A, a.exponent)
    out.save(a.out)


def cmd_hmm_train(a):
    table = fac.normalize_min_max(fac.load_factor_table(a.factors))
    obs = fac.build_observation_sequence(table, a.repeat)
    mc = markov.TransitionMatrix.load(a.init_matrix)
    if a.frequencies:
        freq = np.array(_floats(a.frequencies))
    else:
        freq = class_frequencies(_grid(a.freq_grid), list(mc.classes), _grid(a.mask))
    init = hmm.init_params(mc, freq, obs, a.seed)
    params, trace = hmm.baum_welch_train(init, obs, a.max_iter, a.tol)
    params.save(a.out_params)
    _write_json(trace.to_json(), a.out_trace)


def cmd_lr_fit(a):
    drivers = _named(a.driver)
    names = sorted(drivers)
    grids = [read_ascii_grid(drivers[n], "continuous") for n in names]
    t0 = _grid(a.t0)
    allowed = lcm.parse_allowed(a.allowed, t0.legend)
    subs = lcm.fit_submodels(t0, _grid(a.t1), grids, names, allowed, _grid(a.mask), a.l2)
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for s in subs:
        s.save(out / f"submodel_{s.from_class}_to_{s.to_class}.json")


def cmd_predict(a):
    t0 = _grid(a.t0)
    mask = _grid(a.mask)
    subs = [lcm.TransitionSubModel.load(p) for p in a.submodel]
    drivers = _named(a.driver)
    feature_names = subs[0].model.feature_names
    if any(s.model.feature_names != feature_names for s in subs):
        raise ValueError("sub-models were fitted on different drivers")
    missing = [n for n in feature_names if n not in drivers]
    if missing:
        raise ValueError(f"missing driver(s) {missing}")
    grids = [read_ascii_grid(drivers[n], "continuous") for n in feature_names]
    if a.quantum == "hmm":
        if not a.params:
            raise ValueError("--quantum hmm needs --params")
        A = hmm.learned_quantum(hmm.GaussianHmmParams.load(a.params))
    else:
        if not a.matrix:
            raise ValueError("--quantum mc needs --matrix")
        A = markov.extrapolate(markov.TransitionMatrix.load(a.matrix), a.ratio)
    predicted, quantum, _ = lcm.predict(t0, A, subs, grids, mask)
    write_ascii_grid(predicted, a.out)
    if a.out_quantum:
        _write_json(quantum.to_json(), a.out_quantum)


def cmd_validate(a):
    actual, predicted, mask = _grid(a.actual), _grid(a.predicted), _grid(a.mask)
    report = validate.validation_report(actual, predicted, _ints(a.classes), a.urban, mask)
    _write_json(report, a.out_report)
    if a.out_ppm:
        validate.render_overlay(actual, predicted, a.urban, a.out_ppm, mask)


def cmd_radiometry(a):
    band = read_ascii_grid(a.band, "continuous")
    if a.op == "gapfill":
        out = radiometry.slc_gap_fill(band, a.window, a.max_passes)
    elif a.op == "dos":
        if a.dark_dn is None:
            raise ValueError("dos needs --dark-dn")
        out = radiometry.dark_object_subtract(band, a.dark_dn)
    else:
        if not a.calibration:
            raise ValueError("toa needs --calibration")
        cals = radiometry.load_calibration(a.calibration)
        name = a.band_name or next(iter(cals))
        out = radiometry.band_to_reflectance(band, cals[name])
    write_ascii_grid(out, a.out)


def cmd_synth(a):
    cfg = synth.ScenarioConfig.load(a.config) if a.config else synth.bundled_scenario_config()
    if a.seed is not None:
        cfg.seed = a.seed
    bundle = synth.generate_scenario(cfg)
    bundle.write(a.out)


def cmd_pipeline(a):
    overrides = dict(seed=a.seed, repeat_factor=a.repeat, max_iter=a.max_iter, tol=a.tol, l2=a.l2,
                     bins=a.bins, calibration_year=a.calibration_year, target_year=a.target_year)
    if a.allowed:
        overrides["allowed"] = [list(p) for p in lcm.parse_allowed(a.allowed)]
    if a.bundled:
        report = run_bundled(a.out, **overrides)
    else:
        if not a.config:
            raise ValueError("pipeline needs --config or --bundled")
        cfg = PipelineConfig.load(a.config, **overrides)
        if a.out:
            cfg.output_dir = a.out
        report = run_pipeline(cfg)
    print(json.dumps({"overall_accuracy": report["overall_accuracy"],
                      "config_hash": report["config_hash"]}, sort_keys=True))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lulcc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    s = sub.add_parser("mc-estimate", help="transition matrix from two land-cover grids")
    s.add_argument("--t0", required=True)
    s.add_argument("--t1", required=True)
    s.add_argument("--classes", default="1,2,3")
    s.add_argument("--mask")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_mc_estimate)

    s = sub.add_parser("mc-extrapolate", help="matrix power or elementwise power of a matrix")
    s.add_argument("--matrix", required=True)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--k", type=int, help="integer matrix power")
    g.add_argument("--exponent", type=float, help="elementwise power with row renormalization")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_mc_extrapolate)

    s = sub.add_parser("hmm-train", help="Baum-Welch training on a factor CSV")
    s.add_argument("--factors", required=True)
    s.add_argument("--init-matrix", required=True)
    fg = s.add_mutually_exclusive_group(required=True)
    fg.add_argument("--frequencies", help="comma-separated initial class frequencies")
    fg.add_argument("--freq-grid", help="land-cover grid to count initial frequencies from")
    s.add_argument("--mask")
    s.add_argument("--repeat", type=int, default=6)
    s.add_argument("--max-iter", type=int, default=50000)
    s.add_argument("--tol", type=float, default=0.01)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-params", required=True)
    s.add_argument("--out-trace", required=True)
    s.set_defaults(func=cmd_hmm_train)

    s = sub.add_parser("lr-fit", help="fit logistic transition sub-models")
    s.add_argument("--t0", required=True)
    s.add_argument("--t1", required=True)
    s.add_argument("--driver", action="append", required=True, metavar="NAME=PATH")
    s.add_argument("--allowed", help="e.g. 'V->S,V->I,S->V,S->I' or '1->3,...'")
    s.add_argument("--mask")
    s.add_argument("--l2", type=float, default=1e-6)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_lr_fit)

    s = sub.add_parser("predict", help="allocate a predicted grid")
    s.add_argument("--t0", required=True)
    s.add_argument("--submodel", action="append", required=True)
    s.add_argument("--driver", action="append", required=True, metavar="NAME=PATH")
    s.add_argument("--quantum", choices=("mc", "hmm"), required=True)
    s.add_argument("--matrix", help="MC matrix JSON (for --quantum mc)")
    s.add_argument("--ratio", type=float, default=1.0,
                   help="prediction period / matrix period (for --quantum mc)")
    s.add_argument("--params", help="trained HMM params JSON (for --quantum hmm)")
    s.add_argument("--mask")
    s.add_argument("--out", required=True)
    s.add_argument("--out-quantum")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("validate", help="compare predicted and actual grids")
    s.add_argument("--actual", required=True)
    s.add_argument("--predicted", required=True)
    s.add_argument("--classes", default="1,2,3")
    s.add_argument("--urban", type=int, default=2)
    s.add_argument("--mask")
    s.add_argument("--out-report", required=True)
    s.add_argument("--out-ppm")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("radiometry", help="single-band preprocessing")
    s.add_argument("op", choices=("gapfill", "dos", "toa"))
    s.add_argument("--band", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--window", type=int, default=9)
    s.add_argument("--max-passes", type=int, default=5)
    s.add_argument("--dark-dn", type=float)
    s.add_argument("--calibration")
    s.add_argument("--band-name")
    s.set_defaults(func=cmd_radiometry)

    s = sub.add_parser("synth", help="generate a synthetic scenario bundle")
    s.add_argument("--config", help="ScenarioConfig JSON (default: bundled scenario)")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("pipeline", help="full MC-LR and HMM-LR runs with comparison report")
    s.add_argument("--config", help="PipelineConfig JSON")
    s.add_argument("--bundled", action="store_true", help="run on the bundled synthetic scenario")
    s.add_argument("--out", help="output directory (overrides config)")
    s.add_argument("--seed", type=int)
    s.add_argument("--repeat", type=int)
    s.add_argument("--max-iter", type=int)
    s.add_argument("--tol", type=float)
    s.add_argument("--l2", type=float)
    s.add_argument("--bins", type=int)
    s.add_argument("--allowed")
    s.add_argument("--calibration-year", type=int)
    s.add_argument("--target-year", type=int)
    s.set_defaults(func=cmd_pipeline)
    return p


def run_subcommand(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "pipeline" and args.bundled and not args.out:
        print("lulcc pipeline: error: --bundled needs --out", file=sys.stderr)
        return 2
    try:
        args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        print(json.dumps({"error": str(exc), "type": type(exc).__name__,
                          "subcommand": args.command}), file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run_subcommand())


if __name__ == "__main__":
    main()
