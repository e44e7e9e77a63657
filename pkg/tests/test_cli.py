import json
import os
import subprocess
import sys

import numpy as np
import pytest

from dbarscat.cli import main
from dbarscat.fieldio import read_field, write_field
from dbarscat.grid import Grid2D, RealField
from dbarscat.potentials import gaussian

SMALL = {
    "kscan": {"k_min": 1e-3, "k_max": 4.0, "n_r": 6, "n_theta": 4},
    "dbar": {"m": 16, "K": 4.0, "k_min": 1e-3, "k_max": 4.0},
    "inverse": {"x_n": 8},
    "fit": {"k_lo": 1e-3, "k_hi": 0.1},
}


@pytest.fixture
def env(tmp_path):
    g = Grid2D(32, 6.0)
    pot = tmp_path / "q.dfld"
    write_field(RealField(g, gaussian(g, 1.0, 0.2, 1.0)), pot, kind="potential",
                label="subcritical")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    return tmp_path, str(pot), str(cfg)


def run(args, capsys):
    code = main(args)
    return code, json.loads(capsys.readouterr().out)


def _files(d):
    return {f: open(os.path.join(d, f), "rb").read() for f in sorted(os.listdir(d))}


def test_forward_is_deterministic(env, capsys):
    tmp, pot, cfg = env
    out = str(tmp / "runs")
    code, a = run(["forward", pot, "--config", cfg, "--out", out, "--workers", "1"], capsys)
    assert code == 0
    assert a["run"].startswith("forward-") and a["samples"] == 24 and a["flagged"] == 0
    run_dir = os.path.join(out, a["run"])
    first = _files(run_dir)
    assert set(first) == {"config.json", "scattering.csv", "summary.json"}
    resolved = json.loads(first["config.json"])
    assert resolved["dbar"]["m"] == 16 and "workers" not in resolved
    code, b = run(["forward", pot, "--config", cfg, "--out", out, "--workers", "2"], capsys)
    assert code == 0 and b == a
    assert _files(run_dir) == first


def test_tol_flag_changes_the_run_name(env, capsys):
    tmp, pot, cfg = env
    out = str(tmp / "runs")
    _, a = run(["classify", pot, "--config", cfg, "--out", out], capsys)
    _, b = run(["classify", pot, "--config", cfg, "--out", out, "--tol", "1e-8"], capsys)
    assert a["label"] == "subcritical" and a["run"] != b["run"]


def test_fit_invert_roundtrip_evolve(env, capsys):
    tmp, pot, cfg = env
    out = str(tmp / "runs")
    _, fw = run(["forward", pot, "--config", cfg, "--out", out], capsys)
    csv = os.path.join(out, fw["run"], "scattering.csv")
    code, fit = run(["fit", csv, "--config", cfg, "--out", out], capsys)
    assert code == 0 and fit["a_fit"] > 0
    code, inv = run(["invert", csv, "--config", cfg, "--out", out], capsys)
    assert code == 0 and inv["grid"]["n"] == 8
    rec = read_field(os.path.join(out, inv["run"], "reconstruction.dfld"))
    assert rec.meta["kind"] == "potential_reconstructed"
    code, rt = run(["roundtrip", pot, "--config", cfg, "--out", out], capsys)
    assert code == 0 and np.isfinite(rt["relative_l2_error"]) and rt["scan"]["flagged"] == 0
    code, ev = run(["evolve", pot, "--config", cfg, "--out", out, "--times", "0,0.01"], capsys)
    assert code == 0 and [e["time"] for e in ev["entries"]] == [0.0, 0.01]
    assert read_field(os.path.join(out, ev["run"], "q_t001.dfld")).meta["time"] == 0.01


def test_exit_codes(env, capsys):
    tmp, pot, cfg = env
    out = str(tmp / "runs")
    code, err = run(["forward", str(tmp / "missing.dfld"), "--out", out], capsys)
    assert code == 2 and err["exit_code"] == 2
    bad = tmp / "bad.json"
    bad.write_text(json.dumps({"grid": {"n": 7}}))
    assert run(["classify", pot, "--config", str(bad), "--out", out], capsys)[0] == 2
    # data that stop short of dbar.k_max: coverage failure
    short = dict(SMALL, kscan={"k_min": 1e-3, "k_max": 2.0, "n_r": 6, "n_theta": 4})
    sc = tmp / "short.json"
    sc.write_text(json.dumps(short))
    _, fw = run(["forward", pot, "--config", str(sc), "--out", out], capsys)
    csv = os.path.join(out, fw["run"], "scattering.csv")
    code, err = run(["invert", csv, "--config", str(sc), "--out", out], capsys)
    assert code == 4 and err["error"] == "CoverageError"
    # all-zero data cannot be fitted: solver-family failure
    zero = tmp / "zero.dfld"
    write_field(RealField(Grid2D(32, 6.0), np.zeros((32, 32))), zero)
    _, fw = run(["forward", str(zero), "--config", cfg, "--out", out], capsys)
    csv = os.path.join(out, fw["run"], "scattering.csv")
    code, err = run(["fit", csv, "--config", cfg, "--out", out], capsys)
    assert code == 3 and err["error"] == "DegenerateFitError"


def test_console_entry_point(env):
    tmp, pot, cfg = env
    p = subprocess.run([sys.executable, "-m", "dbarscat", "classify", pot, "--config", cfg,
                        "--out", str(tmp / "r")], capture_output=True, text=True)
    assert p.returncode == 0
    assert json.loads(p.stdout)["label"] == "subcritical"
    p = subprocess.run([sys.executable, "-m", "dbarscat", "--help"], capture_output=True, text=True)
    assert p.returncode == 0
    for cmd in ("forward", "classify", "fit", "invert", "roundtrip", "evolve"):
        assert cmd in p.stdout
