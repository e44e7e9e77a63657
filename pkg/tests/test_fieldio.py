import json

import numpy as np
import pytest

from dbarscat.errors import (DtypeMismatchError, FieldFormatError, MalformedHeaderError,
                             TruncatedPayloadError)
from dbarscat.fieldio import MAGIC, decode_field, encode_field, read_field, write_field
from dbarscat.grid import ComplexField, Grid2D, RealField


def _field(rng, cls=ComplexField):
    g = Grid2D(8, 2.5)
    v = rng.standard_normal(g.shape)
    if cls is ComplexField:
        v = v + 1j * rng.standard_normal(g.shape)
    return cls(g, v)


@pytest.mark.parametrize("cls", [ComplexField, RealField])
def test_roundtrip_preserves_values_and_meta(tmp_path, rng, cls):
    f = _field(rng, cls)
    path = tmp_path / "a.dfld"
    write_field(f, path, kind="mu", label="critical", time=0.25)
    back = read_field(path)
    assert type(back) is cls
    assert back.grid == f.grid
    np.testing.assert_array_equal(back.values, f.values)
    assert back.meta == {"kind": "mu", "label": "critical", "time": 0.25}


def test_encoding_is_deterministic(rng):
    f = _field(rng)
    assert encode_field(f, b=1, a=2) == encode_field(f, a=2, b=1)
    head = encode_field(f).split(b"\n", 1)[0]
    assert json.loads(head)["magic"] == MAGIC


def test_truncated_payload(rng):
    data = encode_field(_field(rng))
    with pytest.raises(TruncatedPayloadError):
        decode_field(data[:-5])


def test_dtype_mismatch(rng):
    data = encode_field(_field(rng, RealField))
    with pytest.raises(DtypeMismatchError):
        decode_field(data, expected_dtype="c128")
    # a complex header over a real payload is caught from the size
    head, payload = data.split(b"\n", 1)
    h = json.loads(head)
    h["dtype"] = "f64"
    bad = json.dumps(h).encode() + b"\n" + payload + payload
    with pytest.raises(DtypeMismatchError):
        decode_field(bad)


@pytest.mark.parametrize("header", [
    b"not json",
    b'{"magic": "XXX", "n": 8, "L": 1, "dtype": "f64"}',
    b'{"magic": "DFLD1", "n": 6, "L": 1, "dtype": "f64"}',
    b'{"magic": "DFLD1", "n": 8, "L": -1, "dtype": "f64"}',
    b'{"magic": "DFLD1", "n": 8, "dtype": "f64"}',
    b"[1, 2]",
])
def test_malformed_headers(header):
    with pytest.raises(MalformedHeaderError):
        decode_field(header + b"\n" + bytes(8 * 8 * 8))


def test_unknown_dtype_and_missing_newline():
    with pytest.raises(DtypeMismatchError):
        decode_field(b'{"magic": "DFLD1", "n": 8, "L": 1, "dtype": "i32"}\n')
    with pytest.raises(FieldFormatError):
        decode_field(b"x" * 100)


def test_extension_cannot_shadow_core_keys(rng):
    with pytest.raises(MalformedHeaderError):
        encode_field(_field(rng), n=16)
