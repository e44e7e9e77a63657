"""Reader and writer for the DFLD1 field file format.

A file is one UTF-8 JSON header line terminated by ``\\n``, followed by the raw
little-endian row-major payload.  Complex payloads interleave real and
imaginary parts.  The header always holds ``magic``, ``n``, ``L`` and
``dtype``; any further keys (``kind``, ``label``, ...) are preserved in the
``meta`` dictionary of the returned field.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .errors import DtypeMismatchError, MalformedHeaderError, TruncatedPayloadError
from .grid import ComplexField, Grid2D, RealField

MAGIC = "DFLD1"
_DTYPES = {"c128": np.dtype("<c16"), "f64": np.dtype("<f8")}
_MAX_HEADER = 1 << 16

__all__ = ["write_field", "read_field", "encode_field", "decode_field", "MAGIC"]


def encode_field(field, **extra) -> bytes:
    """Serialize a field (plus extra header keys) to DFLD1 bytes."""
    tag = field.dtype_tag
    header = {"magic": MAGIC, "n": field.grid.n, "L": field.grid.L, "dtype": tag}
    meta = dict(field.meta)
    meta.update(extra)
    for key in sorted(meta):
        if key in header:
            raise MalformedHeaderError(f"extension key {key!r} shadows a core key")
        header[key] = meta[key]
    line = json.dumps(header, separators=(",", ":"), allow_nan=False)
    payload = np.ascontiguousarray(field.values, dtype=_DTYPES[tag]).tobytes()
    return line.encode("utf-8") + b"\n" + payload


def write_field(field, path, **extra) -> None:
    """Write ``field`` to ``path`` atomically (temp file then rename)."""
    data = encode_field(field, **extra)
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".dfld-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _parse_header(raw: bytes) -> dict:
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeaderError(f"header is not valid UTF-8 JSON: {exc}") from None
    if not isinstance(header, dict):
        raise MalformedHeaderError("header must be a JSON object")
    if header.get("magic") != MAGIC:
        raise MalformedHeaderError(f"bad magic {header.get('magic')!r}")
    for key in ("n", "L", "dtype"):
        if key not in header:
            raise MalformedHeaderError(f"header lacks {key!r}")
    n = header["n"]
    if isinstance(n, bool) or not isinstance(n, int) or n < 8 or n & (n - 1):
        raise MalformedHeaderError(f"n must be a power of two >= 8, got {n!r}")
    L = header["L"]
    if isinstance(L, bool) or not isinstance(L, (int, float)) or not L > 0:
        raise MalformedHeaderError(f"L must be a positive number, got {L!r}")
    if header["dtype"] not in _DTYPES:
        raise DtypeMismatchError(f"unknown dtype {header['dtype']!r}")
    return header


def decode_field(data: bytes, expected_dtype=None):
    """Inverse of :func:`encode_field`."""
    nl = data.find(b"\n", 0, _MAX_HEADER)
    if nl < 0:
        raise MalformedHeaderError("no header terminator found")
    header = _parse_header(data[:nl])
    tag = header["dtype"]
    if expected_dtype is not None and tag != expected_dtype:
        raise DtypeMismatchError(f"expected dtype {expected_dtype}, file has {tag}")
    n = header["n"]
    payload = data[nl + 1:]
    need = n * n * _DTYPES[tag].itemsize
    if len(payload) < need:
        raise TruncatedPayloadError(f"payload has {len(payload)} bytes, header implies {need}")
    if len(payload) > need:
        other = {t: n * n * d.itemsize for t, d in _DTYPES.items()}
        if len(payload) in other.values():
            raise DtypeMismatchError(
                f"payload size {len(payload)} matches a different dtype than {tag}")
        raise MalformedHeaderError(f"{len(payload) - need} trailing bytes after payload")
    values = np.frombuffer(payload, dtype=_DTYPES[tag]).reshape(n, n)
    grid = Grid2D(n, float(header["L"]))
    meta = {k: v for k, v in header.items() if k not in ("magic", "n", "L", "dtype")}
    cls = ComplexField if tag == "c128" else RealField
    return cls(grid, values.astype(cls._dtype), meta=meta)


def read_field(path, expected_dtype=None):
    """Read a DFLD1 file; header extensions land in ``field.meta``."""
    with open(path, "rb") as fh:
        data = fh.read()
    return decode_field(data, expected_dtype=expected_dtype)
