import json

import numpy as np
import pytest

from lulcc.cli import run_subcommand
from lulcc.grid import read_ascii_grid
from lulcc.hmm import GaussianHmmParams, learned_quantum
from lulcc.lcm import QuantumTable, compute_quantum
from lulcc.markov import TransitionMatrix, extrapolate

CONFIG = dict(epochs=[[[0.8, 0.12, 0.08], [0.05, 0.9, 0.05], [0.1, 0.15, 0.75]]],
              emission_means=[[0.9, 0.1], [0.1, 0.9], [0.5, 0.5]],
              emission_vars=[[0.01, 0.01]] * 3, nrows=20, ncols=20, years=6,
              water_cols=[2], road_rows=[7], road_cols=[12], seed=5)


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "scenario.json"
    cfg.write_text(json.dumps(CONFIG))
    assert run_subcommand(["synth", "--config", str(cfg), "--out", str(root / "b")]) == 0
    return root / "b"


def run(*argv):
    return run_subcommand([str(a) for a in argv])


def test_unknown_subcommand(capsys):
    assert run("bogus") == 2
    assert "usage" in capsys.readouterr().err


def test_missing_input_is_exit_one(tmp_path, capsys):
    code = run("mc-estimate", "--t0", tmp_path / "nope.asc", "--t1", tmp_path / "nope.asc",
               "--out", tmp_path / "a.json")
    assert code == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["subcommand"] == "mc-estimate" and "unreadable" in err["error"]


def test_mc_then_predict_paths(bundle, tmp_path):
    t0, t1, t2 = (bundle / f"landcover_{y}.asc" for y in (2001, 2002, 2003))
    mask = bundle / "water_mask.asc"
    drivers = ["--driver", f"slope_suitability={bundle / 'slope_suitability.asc'}",
               "--driver", f"road_proximity={bundle / 'road_proximity.asc'}"]
    assert run("mc-estimate", "--t0", t0, "--t1", t1, "--mask", mask, "--out", tmp_path / "mc.json") == 0
    assert run("mc-extrapolate", "--matrix", tmp_path / "mc.json", "--k", 2,
               "--out", tmp_path / "mc2.json") == 0
    assert run("lr-fit", "--t0", t0, "--t1", t1, "--mask", mask, *drivers,
               "--allowed", "V->S,V->I,S->V,S->I", "--out-dir", tmp_path / "subs") == 0
    subs = sorted((tmp_path / "subs").glob("*.json"))
    assert len(subs) == 4
    sub_args = [a for s in subs for a in ("--submodel", s)]

    assert run("predict", "--t0", t1, *sub_args, *drivers, "--mask", mask, "--quantum", "mc",
               "--matrix", tmp_path / "mc.json", "--ratio", 1, "--out", tmp_path / "p_mc.asc",
               "--out-quantum", tmp_path / "q_mc.json") == 0
    A = extrapolate(TransitionMatrix.load(tmp_path / "mc.json"), 1)
    expected = compute_quantum(A, read_ascii_grid(t1), read_ascii_grid(mask))
    assert QuantumTable.from_json(json.loads((tmp_path / "q_mc.json").read_text())) == expected

    assert run("hmm-train", "--factors", bundle / "factors.csv", "--init-matrix", tmp_path / "mc.json",
               "--freq-grid", t0, "--mask", mask, "--max-iter", 200,
               "--out-params", tmp_path / "hmm.json", "--out-trace", tmp_path / "trace.json") == 0
    trace = json.loads((tmp_path / "trace.json").read_text())
    assert all(b >= a - 1e-8 for a, b in zip(trace, trace[1:]))
    assert run("predict", "--t0", t1, *sub_args, *drivers, "--mask", mask, "--quantum", "hmm",
               "--params", tmp_path / "hmm.json", "--out", tmp_path / "p_hmm.asc",
               "--out-quantum", tmp_path / "q_hmm.json") == 0
    A = learned_quantum(GaussianHmmParams.load(tmp_path / "hmm.json"))
    expected = compute_quantum(A, read_ascii_grid(t1), read_ascii_grid(mask))
    assert QuantumTable.from_json(json.loads((tmp_path / "q_hmm.json").read_text())) == expected

    assert run("validate", "--actual", t2, "--predicted", tmp_path / "p_hmm.asc", "--mask", mask,
               "--out-report", tmp_path / "rep.json", "--out-ppm", tmp_path / "o.ppm") == 0
    rep = json.loads((tmp_path / "rep.json").read_text())
    assert 0 <= rep["overall_accuracy"] <= 1
    assert (tmp_path / "o.ppm").read_bytes().startswith(b"P6\n20 20\n255\n")


def test_predict_hmm_needs_params(bundle, tmp_path, capsys):
    code = run("predict", "--t0", bundle / "landcover_2001.asc", "--submodel", tmp_path / "x.json",
               "--driver", f"a={bundle / 'dem.asc'}", "--quantum", "hmm", "--out", tmp_path / "p.asc")
    assert code == 1


def test_radiometry_subcommands(tmp_path):
    band = tmp_path / "b.asc"
    band.write_text("ncols 3\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 30\nNODATA_value -9999\n"
                    "12 -9999 254\n")
    assert run("radiometry", "gapfill", "--band", band, "--window", 3, "--out", tmp_path / "g.asc") == 0
    assert read_ascii_grid(tmp_path / "g.asc", "continuous").cells.tolist() == [[12, 12, 254]]
    assert run("radiometry", "dos", "--band", tmp_path / "g.asc", "--dark-dn", 10,
               "--out", tmp_path / "d.asc") == 0
    assert read_ascii_grid(tmp_path / "d.asc", "continuous").cells.tolist() == [[2, 2, 244]]
    cal = tmp_path / "cal.json"
    cal.write_text(json.dumps(dict(l_min=0, l_max=10, esun=np.pi * 10, sun_zenith_deg=0,
                                   earth_sun_distance_au=1)))
    assert run("radiometry", "toa", "--band", band, "--calibration", cal, "--out", tmp_path / "r.asc") == 0
    assert read_ascii_grid(tmp_path / "r.asc", "continuous").cells[0, 2] == pytest.approx(1.0, abs=1e-12)
    assert run("radiometry", "dos", "--band", band, "--out", tmp_path / "x.asc") == 1


def test_pipeline_from_config(bundle, tmp_path, capsys):
    manifest = json.loads((bundle / "manifest.json").read_text())
    cfg = dict(grids=manifest["grids"], factors="factors.csv", water_mask="water_mask.asc",
               drivers={"road_proximity": "road_proximity.asc",
                        "slope_suitability": "slope_suitability.asc"},
               output_dir=str(tmp_path / "run"), max_iter=300)
    path = bundle / "pipeline.json"
    path.write_text(json.dumps(cfg))
    assert run("pipeline", "--config", path, "--seed", 1) == 0
    line = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    comp = json.loads((tmp_path / "run" / "comparison.json").read_text())
    assert comp["seed"] == 1 and line["config_hash"] == comp["config_hash"]
    assert set(comp["overall_accuracy"]) == {"mc_lr", "hmm_lr"}
    assert run("pipeline", "--bundled") == 2
