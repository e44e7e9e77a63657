"""Faddeev's Green's function and its renormalization.

``g_k`` is the fundamental solution of ``-4 dbar (d + i k)``,

    g_k(x) = (2 pi)^-2  int exp(i x.xi) / (|xi|^2 + 2 k (xi1 + i xi2)) dxi.

Integrating the symbol in one Fourier variable by residues leaves a smooth,
non-oscillatory one-dimensional integral.  For ``k = 1`` and ``c = -i z``
(``z = x1 + i x2``)

    g_1(z) = [F(c) + exp(-2 i x1) conj(F(c))] / (4 pi),
    F(c)   = int_0^inf exp(-t) / (t + c) dt,

and ``g_k(x) = g_1(k x)`` by a change of variables.  ``F`` is tabulated once
on a log-polar grid (the "master table") and interpolated with tensor cubic
Lagrange stencils.  Outside the table, tiny ``|c|`` uses the convergent
small-argument series and large ``|c|`` falls back to the quadrature itself.

:func:`faddeev_direct` is an independent slow evaluator that integrates the
symbol with adaptive quadrature; it exists for verification.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import quad

from .errors import DomainError, FieldFormatError, InputError, QuadratureError
from .fieldio import read_field, write_field
from .grid import ComplexField, Grid2D

__all__ = [
    "EULER_GAMMA",
    "ell",
    "F_quadrature",
    "F_eval",
    "g1_values",
    "gk_values",
    "gk_cell_average_origin",
    "FaddeevKernel",
    "faddeev_g1",
    "faddeev_gk",
    "faddeev_direct",
    "MasterTable",
    "master_table",
    "set_cache_dir",
]

EULER_GAMMA = 0.5772156649015329

# master-table layout
_N = 512
_GHOST = 2
_C_MIN = 1e-3
_C_MAX = 1e3
_U0 = float(np.log(_C_MIN))
_U1 = float(np.log(_C_MAX))
_DU = (_U1 - _U0) / (_N - 1)
_DTH = 2.0 * np.pi / (_N - 2 * _GHOST)
_QUAD_TOL = 1e-6

_cache_dir = os.path.join(os.path.expanduser("~"), ".cache", "dbarscat")
_lock = threading.Lock()
_table = None


def set_cache_dir(path):
    """Redirect the on-disk master-table cache (``None`` disables it)."""
    global _cache_dir, _table
    _cache_dir = None if path is None else os.fspath(path)
    _table = None


def ell(k) -> float:
    """``(log|k| + gamma) / (2 pi)`` with Euler's constant ``gamma``."""
    k = complex(k)
    if k == 0:
        raise DomainError("ell(k) is undefined at k = 0")
    return (np.log(abs(k)) + EULER_GAMMA) / (2.0 * np.pi)


# ---------------------------------------------------------------------------
# one-dimensional quadrature for F
# ---------------------------------------------------------------------------

@lru_cache(maxsize=4)
def _panel_rule(order):
    x, w = leggauss(order)
    edges = 1e-14 * 2.0 ** np.arange(0, 60)
    edges = np.concatenate([[0.0], edges[edges < 100.0], [100.0]])
    a, b = edges[:-1, None], edges[1:, None]
    nodes = (0.5 * (b - a) * x + 0.5 * (b + a)).ravel()
    weights = (0.5 * (b - a) * w).ravel()
    return nodes, weights


def F_quadrature(c, alpha=None, order=16):
    """Evaluate ``F(c)`` by Gauss-Legendre quadrature on a rotated ray.

    The ray ``t = s exp(i alpha)`` keeps the pole ``t = -c`` at least 60
    degrees away.  By default ``alpha = +pi/3`` for ``Im c >= 0`` and
    ``-pi/3`` otherwise, which selects the principal branch; passing
    ``alpha`` explicitly yields analytic continuation across the cut.
    """
    c = np.asarray(c, dtype=complex)
    if alpha is None:
        alpha = np.where(c.imag >= 0, np.pi / 3, -np.pi / 3)
    rot = np.broadcast_to(np.exp(1j * np.asarray(alpha, float)), c.shape).ravel()
    s, w = _panel_rule(order)
    cf = c.ravel()
    out = np.empty(cf.size, dtype=complex)
    chunk = max(1, 400_000 // s.size)
    for i0 in range(0, cf.size, chunk):
        cc = cf[i0:i0 + chunk, None]
        rr = rot[i0:i0 + chunk, None]
        t = s[None, :] * rr
        out[i0:i0 + chunk] = (w[None, :] * np.exp(-t) * rr / (t + cc)).sum(axis=1)
    return out.reshape(c.shape)


def _F_small(c):
    # exp(c) E1(c) with the convergent series of E1; |c| < 1e-3 keeps 5 terms
    # far below double precision.
    series = np.zeros_like(c)
    term = np.ones_like(c)
    for n in range(1, 6):
        term = term * (-c) / n
        series = series + term / n
    return np.exp(c) * (-EULER_GAMMA - np.log(c) - series)


@dataclass(frozen=True)
class MasterTable:
    """Log-polar samples of ``F`` with ghost columns across the branch cut."""

    values: np.ndarray
    quad_error: float

    @property
    def thetas(self):
        return -np.pi + (np.arange(_N) - _GHOST + 0.5) * _DTH

    @property
    def us(self):
        return _U0 + _DU * np.arange(_N)


def _build_table() -> MasterTable:
    u = _U0 + _DU * np.arange(_N)
    th = -np.pi + (np.arange(_N) - _GHOST + 0.5) * _DTH
    c = np.exp(u[:, None] + 1j * th[None, :])
    alpha = np.where(th > 0, np.pi / 3, -np.pi / 3)[None, :]
    alpha = np.broadcast_to(alpha, c.shape)
    vals = F_quadrature(c, alpha)
    # error estimate: compare against a higher-order rule on a sub-lattice
    sub = (slice(3, None, 29), slice(1, None, 31))
    ref = F_quadrature(c[sub], alpha[sub], order=24)
    err = float(np.max(np.abs(vals[sub] - ref) / np.abs(ref)))
    if not err <= _QUAD_TOL:
        raise QuadratureError(f"master table quadrature error {err:.2e} exceeds {_QUAD_TOL:.0e}")
    return MasterTable(vals, err)


def _cache_path():
    if _cache_dir is None:
        return None
    return os.path.join(_cache_dir, f"g1_master_N{_N}_v1.dfld")


def master_table() -> MasterTable:
    """Return the process-wide master table, building or loading it once."""
    global _table
    with _lock:
        if _table is not None:
            return _table
        path = _cache_path()
        if path is not None and os.path.exists(path):
            try:
                fld = read_field(path, expected_dtype="c128")
                meta = fld.meta
                if (meta.get("kind") == "g1_master" and meta.get("u_min") == _U0
                        and meta.get("u_max") == _U1 and meta.get("ghost") == _GHOST):
                    _table = MasterTable(np.array(fld.values), float(meta["quad_error"]))
                    return _table
            except (FieldFormatError, OSError, KeyError):
                pass
        tab = _build_table()
        if path is not None:
            try:
                os.makedirs(_cache_dir, exist_ok=True)
                write_field(
                    ComplexField(Grid2D(_N, np.pi), tab.values), path,
                    kind="g1_master", layout="logpolar", u_min=_U0, u_max=_U1,
                    ghost=_GHOST, quad_error=tab.quad_error,
                )
            except OSError:
                pass
        _table = tab
        return _table


def _lagrange4(s, size):
    i = np.clip(np.floor(s).astype(np.int64) - 1, 0, size - 4)
    f = s - i
    w0 = -(f - 1) * (f - 2) * (f - 3) / 6.0
    w1 = f * (f - 2) * (f - 3) / 2.0
    w2 = -f * (f - 1) * (f - 3) / 2.0
    w3 = f * (f - 1) * (f - 2) / 6.0
    return i, (w0, w1, w2, w3)


def _F_table(c):
    T = master_table().values
    su = (np.log(np.abs(c)) - _U0) / _DU
    st = (np.angle(c) + np.pi) / _DTH - 0.5 + _GHOST
    iu, wu = _lagrange4(su, _N)
    it, wt = _lagrange4(st, _N)
    flat = T.ravel()
    out = np.zeros(c.shape, dtype=complex)
    for a in range(4):
        base = (iu + a) * _N + it
        acc = wt[0] * flat[base]
        for b in range(1, 4):
            acc = acc + wt[b] * flat[base + b]
        out += wu[a] * acc
    return out


def F_eval(c):
    """``F(c) = int_0^inf e^{-t}/(t+c) dt`` for any ``c`` off ``(-inf, 0]``."""
    c = np.asarray(c, dtype=complex)
    flat = c.ravel()
    out = np.empty(flat.size, dtype=complex)
    r = np.abs(flat)
    small = r < _C_MIN
    big = r > _C_MAX
    mid = ~(small | big)
    if small.any():
        out[small] = _F_small(flat[small])
    if mid.any():
        out[mid] = _F_table(flat[mid])
    if big.any():
        out[big] = F_quadrature(flat[big])
    return out.reshape(c.shape)


def g1_values(z):
    """Samples of ``g_1`` at complex points ``z`` (``z = 0`` is singular)."""
    z = np.asarray(z, dtype=complex)
    Fc = F_eval(-1j * z)
    return (Fc + np.exp(-2j * z.real) * np.conj(Fc)) / (4.0 * np.pi)


def gk_values(x, k):
    """Samples of ``g_k(x) = g_1(k x)``."""
    k = complex(k)
    if k == 0:
        raise DomainError("g_k is undefined at k = 0")
    return g1_values(k * np.asarray(x, dtype=complex))


# average of log|y| over the unit square [-1/2, 1/2]^2
_LOG_CELL_CONST = 0.5 * (np.log(0.5) - 3.0 + 0.5 * np.pi)


def _log_rect_antiderivative(x, y):
    # d^2/dxdy of this function is log|(x, y)|
    r2 = x * x + y * y
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (x * y * np.log(r2) - 3 * x * y + x * x * np.arctan(y / x)
             + y * y * np.arctan(x / y))
    return 0.5 * np.nan_to_num(t)


@lru_cache(maxsize=1)
def trapezoid_log_constant(N=300):
    """Origin weight constant that makes the trapezoidal sum of ``log|y|`` exact.

    On the unit lattice, weighting the origin by ``C`` instead of
    ``log 0`` gives a rule whose error for ``f(y) log|y|`` (``f`` smooth,
    compactly supported) has no ``O(h^2)`` term.  ``C`` equals the cell
    average of ``log|y|`` plus the lattice sum of the differences between
    cell integrals and point values (which converges like ``|j|^-4``), minus
    ``pi/12``.  The last term comes from the variation of ``f`` inside each
    cell: summing the midpoint errors of ``f log|y|`` and integrating by parts
    leaves ``-(pi/12) h^2 f(0)``.
    """
    F = _log_rect_antiderivative
    j = np.arange(-N, N + 1, dtype=float)
    jx, jy = np.meshgrid(j, j)
    cell = (F(jx + 0.5, jy + 0.5) - F(jx - 0.5, jy + 0.5)
            - F(jx + 0.5, jy - 0.5) + F(jx - 0.5, jy - 0.5))
    with np.errstate(divide="ignore"):
        point = 0.5 * np.log(jx * jx + jy * jy)
    diff = cell - point
    diff[N, N] = 0.0
    # sum shells from the outside in to limit rounding
    total = 0.0
    for r in range(N, 0, -1):
        ring = np.maximum(np.abs(jx), np.abs(jy)) == r
        total += diff[ring].sum()
    return _LOG_CELL_CONST + total - np.pi / 12.0


def gk_cell_average_origin(h, k, order=4):
    """Origin weight (divided by ``h^2``) for sampled ``g_k`` convolutions.

    Splits ``g_k = G0 - ell(k) + R_k`` where ``R_k`` is continuous and
    vanishes at the origin.  The ``G0`` part uses the lattice-corrected
    constant of :func:`trapezoid_log_constant`, so the discrete convolution is
    free of the ``O(h^2)`` error that the plain cell average would leave; the
    remainder is averaged over the cell with a tensor Gauss rule.
    """
    x, w = leggauss(order)
    pts = 0.5 * h * (x[None, :] + 1j * x[:, None])
    wts = 0.25 * w[None, :] * w[:, None]
    R = gk_values(pts, k) + np.log(np.abs(pts)) / (2 * np.pi) + ell(k)
    g0_weight = -(np.log(h) + trapezoid_log_constant()) / (2 * np.pi)
    return g0_weight - ell(k) + np.sum(wts * R)


class FaddeevKernel:
    """``g_k`` (or ``g~_k = g_k + ell(k)``) sampled on a grid.

    The origin node holds the cell average of the kernel so that every value
    is finite and the kernel can be used directly in a discrete convolution.
    """

    def __init__(self, grid, k, values, renormalized=False):
        self.grid = grid
        self.k = complex(k)
        self.values = values if isinstance(values, ComplexField) else ComplexField(grid, values)
        self.renormalized = bool(renormalized)

    def renormalize(self) -> "FaddeevKernel":
        if self.renormalized:
            return self
        return FaddeevKernel(self.grid, self.k, self.values.values + ell(self.k), True)


def _kernel_on_offsets(z, h, k):
    """Kernel samples at offsets ``z`` with the origin replaced by the cell mean."""
    zero = z == 0
    zz = np.where(zero, 1.0, z)
    vals = gk_values(zz, k)
    vals[zero] = gk_cell_average_origin(h, k)
    return vals


def faddeev_gk(grid: Grid2D, k, renormalized: bool = False) -> FaddeevKernel:
    """Sample ``g_k`` on the nodes of ``grid`` (origin holds the cell average)."""
    if not isinstance(grid, Grid2D):
        raise InputError("grid must be a Grid2D")
    k = complex(k)
    if k == 0:
        raise DomainError("g_k is undefined at k = 0")
    vals = _kernel_on_offsets(grid.z(), grid.h, k)
    ker = FaddeevKernel(grid, k, vals)
    return ker.renormalize() if renormalized else ker


def faddeev_g1(grid: Grid2D) -> FaddeevKernel:
    """``g_1`` on ``grid``."""
    return faddeev_gk(grid, 1.0)


# ---------------------------------------------------------------------------
# independent oracle
# ---------------------------------------------------------------------------

def _cquad(f, a, b):
    kw = dict(limit=500, epsabs=1e-15, epsrel=1e-12)
    re = quad(lambda s: f(s).real, a, b, **kw)[0]
    im = quad(lambda s: f(s).imag, a, b, **kw)[0]
    return re + 1j * im


def faddeev_direct(x, k) -> complex:
    """Evaluate ``g_k(x)`` straight from its Fourier integral.

    One Fourier variable is integrated by residues (closing in the half
    plane where ``exp(i x_j xi_j)`` decays, with ``j`` the larger coordinate
    of ``x``); the other is integrated with adaptive quadrature.  Makes no
    use of the scaling rule, the master table or ``F``.
    """
    x = complex(x)
    k = complex(k)
    if k == 0 or x == 0:
        raise DomainError("faddeev_direct needs x != 0 and k != 0")
    x1, x2 = x.real, x.imag
    if abs(x1) >= abs(x2):
        sg = 1.0 if x1 > 0 else -1.0

        def res_a(s):
            a, b = -1j * s, -2 * k + 1j * s
            return sg * 2j * np.pi * np.exp(1j * x1 * a) / (a - b) * np.exp(1j * x2 * s)

        def res_b(s):
            a, b = -1j * s, -2 * k + 1j * s
            return sg * 2j * np.pi * np.exp(1j * x1 * b) / (b - a) * np.exp(1j * x2 * s)

        T = 45.0 / abs(x1)
        k2 = k.imag
        if sg > 0:
            val = _cquad(res_a, -T, 0.0) + _cquad(res_b, 2 * k2, 2 * k2 + T)
        else:
            val = _cquad(res_a, 0.0, T) + _cquad(res_b, 2 * k2 - T, 2 * k2)
    else:
        sg = 1.0 if x2 > 0 else -1.0

        def res_c(s):
            c, d = 1j * s, -2j * k - 1j * s
            return sg * 2j * np.pi * np.exp(1j * x2 * c) / (c - d) * np.exp(1j * x1 * s)

        def res_d(s):
            c, d = 1j * s, -2j * k - 1j * s
            return sg * 2j * np.pi * np.exp(1j * x2 * d) / (d - c) * np.exp(1j * x1 * s)

        T = 45.0 / abs(x2)
        k1 = k.real
        if sg > 0:
            val = _cquad(res_c, 0.0, T) + _cquad(res_d, -2 * k1 - T, -2 * k1)
        else:
            val = _cquad(res_c, -T, 0.0) + _cquad(res_d, -2 * k1, -2 * k1 + T)
    return val / (4.0 * np.pi ** 2)
