"""Run configuration with a canonical JSON form and a content hash."""

from __future__ import annotations

import copy
import hashlib
import json
import os

from .errors import InputError

__all__ = ["DEFAULTS", "RunConfig", "canonical_json", "file_digest"]

DEFAULTS = {
    "grid": {"n": 128, "L": 8.0},
    "kscan": {"structure": "polar", "k_min": 1e-3, "k_max": 12.0, "n_r": 40, "n_theta": 16},
    "dbar": {"m": 128, "K": 12.0, "k_min": 1e-3, "k_max": 12.0, "fill_policy": "zero",
             "fill_a": None, "fill_c_inf": None},
    "solver": {"tol": 1e-10, "restart": 30, "maxiter": 500, "pde_residual": True},
    "inverse": {"x_n": 64, "tol": 1e-10},
    "fit": {"k_lo": 1e-4, "k_hi": 5e-2, "c_inf": 1.0},
    "nv": {"times": [0.0]},
    "seed": 0,
    "workers": None,
}

_RUNTIME_KEYS = ("workers",)


def canonical_json(obj) -> str:
    """Sorted keys, no whitespace, no NaN."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _merge(base, over, path=""):
    for key, val in over.items():
        if key not in base:
            raise InputError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise InputError(f"config key {path + key!r} must be an object")
            _merge(base[key], val, path + key + ".")
        else:
            base[key] = val


class RunConfig:
    """Resolved configuration: defaults, then the config file, then flags."""

    def __init__(self, data=None):
        self.data = copy.deepcopy(DEFAULTS)
        if data:
            _merge(self.data, data)
        self.validate()

    @classmethod
    def load(cls, path=None, overrides=None):
        data = {}
        if path is not None:
            try:
                with open(path, encoding="utf-8") as fh:
                    data = json.load(fh)
            except OSError as exc:
                raise InputError(f"cannot read config {os.fspath(path)}: {exc}") from None
            except json.JSONDecodeError as exc:
                raise InputError(f"config {os.fspath(path)} is not valid JSON: {exc}") from None
            if not isinstance(data, dict):
                raise InputError("config must be a JSON object")
        cfg = cls(data)
        for dotted, val in (overrides or {}).items():
            if val is None:
                continue
            node = cfg.data
            *parents, leaf = dotted.split(".")
            for p in parents:
                node = node[p]
            node[leaf] = val
        cfg.validate()
        return cfg

    def __getitem__(self, key):
        return self.data[key]

    def validate(self):
        d = self.data
        g = d["grid"]
        n = g["n"]
        if not isinstance(n, int) or n < 8 or n & (n - 1):
            raise InputError("grid.n must be a power of two >= 8")
        if not float(g["L"]) > 0:
            raise InputError("grid.L must be positive")
        ks = d["kscan"]
        if ks["structure"] not in ("polar", "lattice"):
            raise InputError("kscan.structure must be 'polar' or 'lattice'")
        if not 0 < ks["k_min"] < ks["k_max"]:
            raise InputError("kscan needs 0 < k_min < k_max")
        if int(ks["n_r"]) < 2 or int(ks["n_theta"]) < 1:
            raise InputError("kscan needs n_r >= 2 and n_theta >= 1")
        db = d["dbar"]
        m = db["m"]
        if not isinstance(m, int) or m < 8 or m & (m - 1):
            raise InputError("dbar.m must be a power of two >= 8")
        if not 0 < db["k_min"] < db["k_max"] <= float(db["K"]) * 2 ** 0.5:
            raise InputError("dbar needs 0 < k_min < k_max <= K sqrt(2)")
        if db["fill_policy"] not in ("zero", "model"):
            raise InputError("dbar.fill_policy must be 'zero' or 'model'")
        if db["fill_policy"] == "model" and (db["fill_a"] is None or db["fill_c_inf"] is None):
            raise InputError("model fill needs dbar.fill_a and dbar.fill_c_inf")
        s = d["solver"]
        if not 0 < float(s["tol"]) < 1:
            raise InputError("solver.tol must lie in (0, 1)")
        if int(s["restart"]) < 1 or int(s["maxiter"]) < 1:
            raise InputError("solver.restart and solver.maxiter must be positive")
        xn = d["inverse"]["x_n"]
        if not isinstance(xn, int) or xn < 8 or xn & (xn - 1):
            raise InputError("inverse.x_n must be a power of two >= 8")
        f = d["fit"]
        if not 0 < f["k_lo"] < f["k_hi"]:
            raise InputError("fit needs 0 < k_lo < k_hi")
        times = d["nv"]["times"]
        if not isinstance(times, list) or not all(isinstance(t, (int, float)) for t in times):
            raise InputError("nv.times must be a list of numbers")
        w = d["workers"]
        if w is not None and (not isinstance(w, int) or w < 1):
            raise InputError("workers must be a positive integer")

    @property
    def workers(self) -> int:
        return self.data["workers"] or (os.cpu_count() or 1)

    def scientific(self) -> dict:
        """Everything that can change results (runtime-only keys removed)."""
        return {k: v for k, v in self.data.items() if k not in _RUNTIME_KEYS}

    def to_json(self) -> str:
        return json.dumps(self.scientific(), sort_keys=True, indent=2) + "\n"

    def run_id(self, command: str, inputs=()) -> str:
        """``<command>-<12 hex digits>`` from the canonical config and input digests."""
        payload = canonical_json({"command": command, "config": self.scientific(),
                                  "inputs": list(inputs)})
        return f"{command}-{hashlib.sha256(payload.encode()).hexdigest()[:12]}"
