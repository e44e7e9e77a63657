"""Command-line front end: ``dbarscat <command> [options] INPUT``.

Every command resolves its configuration (defaults, then ``--config``, then
flags), derives a run name from the canonical JSON of that configuration and
the input digest, writes its artifacts plus ``config.json`` to
``<out>/<run name>/`` and prints a JSON summary on stdout.  Failures print a
JSON error object and exit with the code of the error family:
2 input, 3 solver, 4 coverage/validation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .asymptotics import fit_json_text, fit_smallk, smallk_csv_text
from .config import RunConfig, file_digest
from .errors import DbarError, InputError
from .fieldio import read_field, write_field
from .forward import KGrid, read_scattering_csv, scan_k, write_scattering_csv
from .grid import RealField
from .inverse import build_dbar_data, dual_grid, reconstruct_q, sample_on
from .nv import evolve_scattering
from .potentials import Potential, classify

__all__ = ["main", "build_parser"]

OUT_ENV = "DBARSCAT_OUT"


def _json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"


def _write_text(path, text):
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _load_potential(path) -> Potential:
    try:
        f = read_field(path, expected_dtype="f64")
    except FileNotFoundError:
        raise InputError(f"no such file: {path}") from None
    label = f.meta.get("label", "unknown")
    if label not in ("critical", "subcritical", "supercritical", "unknown"):
        label = "unknown"
    return Potential(RealField(f.grid, f.values), label, {"source": os.path.basename(path)})


def _kgrid(cfg: RunConfig, lattice=False) -> KGrid:
    if lattice or cfg["kscan"]["structure"] == "lattice":
        db = cfg["dbar"]
        return KGrid.lattice(db["m"], float(db["K"]), db["k_min"], db["k_max"])
    ks = cfg["kscan"]
    return KGrid.polar(ks["k_min"], ks["k_max"], ks["n_r"], ks["n_theta"])


def _fill(cfg):
    db = cfg["dbar"]
    if db["fill_policy"] == "model":
        return {"a": db["fill_a"], "c_inf": db["fill_c_inf"]}
    return None


class _Run:
    def __init__(self, cfg: RunConfig, command, inputs, out):
        self.cfg = cfg
        try:
            digests = [file_digest(p) for p in inputs]
        except OSError as exc:
            raise InputError(f"cannot read input: {exc}") from None
        self.run_id = cfg.run_id(command, digests)
        self.dir = os.path.join(out, self.run_id)
        os.makedirs(self.dir, exist_ok=True)
        _write_text(self.path("config.json"), cfg.to_json())

    def path(self, name):
        return os.path.join(self.dir, name)


def _scan(cfg, q, kgrid):
    s = cfg["solver"]
    return scan_k(q, kgrid, float(s["tol"]), workers=cfg.workers, pde=bool(s["pde_residual"]))


def _scan_summary(sd):
    pde = sd.residual_pde
    return {
        "samples": int(sd.k.size),
        "solves": int(sd.meta.get("solves", sd.k.size)),
        "flagged": sd.n_flagged(),
        "max_residual_ls": float(np.max(sd.residual)) if sd.k.size else 0.0,
        "max_residual_pde": float(np.nanmax(pde)) if pde is not None and np.any(np.isfinite(pde)) else None,
    }


def cmd_forward(cfg, args, out):
    run = _Run(cfg, "forward", [args.input], out)
    q = _load_potential(args.input)
    sd = _scan(cfg, q, _kgrid(cfg))
    write_scattering_csv(sd, run.path("scattering.csv"))
    summary = {"run": run.run_id, "csv": run.path("scattering.csv"), **_scan_summary(sd)}
    _write_text(run.path("summary.json"), _json(summary))
    return summary


def cmd_classify(cfg, args, out):
    run = _Run(cfg, "classify", [args.input], out)
    c = classify(_load_potential(args.input))
    verdict = {"run": run.run_id, **c.to_dict()}
    _write_text(run.path("verdict.json"), _json(verdict))
    return verdict


def _read_csv(cfg, path):
    ks = cfg["kscan"]
    if ks["structure"] == "polar":
        params = {"k_min": ks["k_min"], "k_max": ks["k_max"], "n_r": ks["n_r"],
                  "n_theta": ks["n_theta"], "theta0": np.pi / ks["n_theta"]}
        sd = read_scattering_csv(path, "polar", params)
        if sd.k.size != ks["n_r"] * ks["n_theta"]:
            raise InputError("CSV size does not match the kscan section of the config")
        return sd
    return read_scattering_csv(path, "lattice", {})


def cmd_fit(cfg, args, out):
    run = _Run(cfg, "fit", [args.input], out)
    sd = _read_csv(cfg, args.input)
    f = cfg["fit"]
    fit = fit_smallk(sd, (f["k_lo"], f["k_hi"]), c_inf=f["c_inf"])
    _write_text(run.path("fit.json"), fit_json_text(fit))
    _write_text(run.path("model.csv"), smallk_csv_text(sd, fit))
    return {"run": run.run_id, **fit.to_dict()}


def _invert(cfg, sd, times=(0.0,)):
    db = cfg["dbar"]
    dd = build_dbar_data(sd, db["m"], float(db["K"]), db["k_min"], db["fill_policy"],
                         k_max=db["k_max"], fill_params=_fill(cfg))
    gx = dual_grid(dd, cfg["inverse"]["x_n"])
    recs = []
    for t in times:
        d = evolve_scattering(dd, t).carried()
        recs.append(reconstruct_q(d, gx, tol=float(cfg["inverse"]["tol"]), workers=cfg.workers))
    return dd, recs


def cmd_invert(cfg, args, out):
    run = _Run(cfg, "invert", [args.input], out)
    sd = _read_csv(cfg, args.input)
    dd, (rec,) = _invert(cfg, sd)
    path = run.path("reconstruction.dfld")
    write_field(rec.q.q, path, kind="potential_reconstructed", label="unknown")
    report = {"run": run.run_id, "field": path, "dbar": dd.to_dict(), **rec.report()}
    _write_text(run.path("report.json"), _json(report))
    return report


def cmd_roundtrip(cfg, args, out):
    run = _Run(cfg, "roundtrip", [args.input], out)
    q = _load_potential(args.input)
    sd = _scan(cfg, q, _kgrid(cfg, lattice=True))
    write_scattering_csv(sd, run.path("scattering.csv"))
    dd, (rec,) = _invert(cfg, sd)
    write_field(rec.q.q, run.path("reconstruction.dfld"), kind="potential_reconstructed",
                label="unknown")
    ref = sample_on(q, rec.q.grid)
    nq = np.linalg.norm(ref)
    err = float(np.linalg.norm(rec.q.values - ref) / nq) if nq > 0 else \
        float(np.linalg.norm(rec.q.values))
    metrics = {"run": run.run_id, "relative_l2_error": err, "imag_ratio": rec.imag_ratio,
               "scan": _scan_summary(sd), "dbar": dd.to_dict(), **rec.report()}
    _write_text(run.path("metrics.json"), _json(metrics))
    return metrics


def cmd_evolve(cfg, args, out):
    times = cfg["nv"]["times"] if args.times is None else [float(t) for t in args.times.split(",")]
    cfg.data["nv"]["times"] = times
    run = _Run(cfg, "evolve", [args.input], out)
    q = _load_potential(args.input)
    sd = _scan(cfg, q, _kgrid(cfg, lattice=True))
    dd, recs = _invert(cfg, sd, times)
    entries = []
    for i, (t, rec) in enumerate(zip(times, recs)):
        name = f"q_t{i:03d}.dfld"
        write_field(rec.q.q, run.path(name), kind="potential_reconstructed", label="unknown",
                    time=float(t))
        entries.append({"time": float(t), "file": name, **rec.report()})
    manifest = {"run": run.run_id, "times": times, "dbar": dd.to_dict(), "entries": entries,
                "scan": _scan_summary(sd)}
    _write_text(run.path("manifest.json"), _json(manifest))
    return manifest


COMMANDS = {
    "forward": (cmd_forward, "scattering transform of a potential (CSV)"),
    "classify": (cmd_classify, "critical / subcritical / supercritical verdict"),
    "fit": (cmd_fit, "small-k law fit of a scattering CSV"),
    "invert": (cmd_invert, "reconstruct a potential from a scattering CSV"),
    "roundtrip": (cmd_roundtrip, "forward scan then reconstruction, with error metrics"),
    "evolve": (cmd_evolve, "Novikov-Veselov evolution by inverse scattering"),
}


def build_parser():
    p = argparse.ArgumentParser(prog="dbarscat", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("input", help="DFLD1 potential or scattering CSV")
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./runs)")
        sp.add_argument("--workers", type=int, help="worker processes (default: all cores)")
        sp.add_argument("--tol", type=float, help="solver tolerance")
        if name == "evolve":
            sp.add_argument("--times", help="comma-separated times (overrides nv.times)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        overrides = {"workers": args.workers}
        if args.tol is not None:
            overrides["solver.tol"] = args.tol
            overrides["inverse.tol"] = args.tol
        cfg = RunConfig.load(args.config, overrides)
        out = args.out or os.environ.get(OUT_ENV) or "runs"
        result = COMMANDS[args.command][0](cfg, args, out)
    except DbarError as exc:
        sys.stdout.write(_json({"error": type(exc).__name__, "message": str(exc),
                                "exit_code": exc.exit_code}))
        return exc.exit_code
    sys.stdout.write(_json(result))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
