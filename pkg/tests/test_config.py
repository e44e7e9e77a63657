import json

import pytest

from dbarscat.config import DEFAULTS, RunConfig, canonical_json, file_digest
from dbarscat.errors import InputError


def test_defaults_match_the_reference_setup():
    c = RunConfig()
    assert c["grid"] == {"n": 128, "L": 8.0}
    assert c["dbar"]["m"] == 128 and c["dbar"]["K"] == 12.0 and c["dbar"]["k_min"] == 1e-3
    assert c["kscan"]["k_max"] == 12.0


def test_layering_file_then_overrides(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"solver": {"tol": 1e-8}, "inverse": {"x_n": 32}}))
    c = RunConfig.load(p, {"solver.tol": 1e-6, "workers": 3})
    assert c["solver"]["tol"] == 1e-6
    assert c["inverse"]["x_n"] == 32
    assert c.workers == 3
    assert DEFAULTS["solver"]["tol"] == 1e-10  # defaults untouched


@pytest.mark.parametrize("bad", [
    {"nope": 1},
    {"grid": 3},
    {"grid": {"n": 100}},
    {"grid": {"L": -1}},
    {"kscan": {"structure": "hex"}},
    {"kscan": {"k_min": 2.0, "k_max": 1.0}},
    {"dbar": {"k_max": 20.0}},
    {"dbar": {"fill_policy": "model"}},
    {"solver": {"tol": 2.0}},
    {"inverse": {"x_n": 12}},
    {"nv": {"times": "soon"}},
    {"workers": 0},
])
def test_invalid_configs(bad):
    with pytest.raises(InputError):
        RunConfig(bad)


def test_unreadable_and_non_object_files(tmp_path):
    with pytest.raises(InputError):
        RunConfig.load(tmp_path / "missing.json")
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(InputError):
        RunConfig.load(p)
    p.write_text("[1, 2]")
    with pytest.raises(InputError):
        RunConfig.load(p)


def test_run_id_ignores_runtime_keys_and_key_order(tmp_path):
    a = RunConfig.load(None, {"workers": 1})
    b = RunConfig.load(None, {"workers": 8})
    assert a.run_id("forward", ["x"]) == b.run_id("forward", ["x"])
    assert a.run_id("forward", ["x"]) != a.run_id("invert", ["x"])
    assert a.run_id("forward", ["x"]) != a.run_id("forward", ["y"])
    assert canonical_json({"b": 1, "a": [1, 2]}) == '{"a":[1,2],"b":1}'
    with pytest.raises(ValueError):
        canonical_json({"a": float("nan")})
    f = tmp_path / "f"
    f.write_bytes(b"abc")
    assert file_digest(f) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    assert "workers" not in json.loads(a.to_json())
