"""Inverse scattering: the d-bar equation in k and the reconstruction of q.

For fixed ``x`` (and evolution time ``time``) the CGO factor solves

    dbar_k mu(x, k) = exp(-i phi(x, k, time)) s(k) conj(mu(x, k)),
    phi = (k x + conj(k x)) + time (k^3 + conj(k)^3),

with ``s(k) = t(k) / (4 pi conj(k))``.  Writing ``T_x g = dbar_k^{-1}(e s conj g)``
the unknown ``w = mu - 1`` satisfies ``w - T_x w = T_x 1``.  ``T_x`` is only
real-linear, so the system is solved with GMRES on the real and imaginary
parts.  The potential is recovered as ``q = 4 i dbar_x a1`` where

    a1(x) = (1/pi) int exp(-i phi) s conj(mu) dk

is the coefficient of ``1/k`` in the large-k expansion of ``mu``.

On k-lattice nodes the phase is periodic in ``x`` with period ``pi / h_k``,
so ``a1`` is reconstructed on that periodic box (:func:`dual_grid`) and
differentiated spectrally; see :func:`field_of_view` for what is kept.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import fft as sfft
from scipy.interpolate import RegularGridInterpolator

from .errors import CoverageError, InputError, SolverError
from .forward import KGrid, ScatteringData
from .grid import ComplexField, Grid2D, RealField, _cauchy_kernel_direct_hat, \
    _cauchy_symbol_padded, _first_order_symbols, smooth_window, trig_resample
from .krylov import gmres
from .potentials import Potential

__all__ = [
    "FILL_POLICIES",
    "DbarData",
    "DbarSolution",
    "Reconstruction",
    "build_dbar_data",
    "phase",
    "apply_Tx",
    "solve_mu_inverse",
    "expansion_coeff_a1",
    "a1_field",
    "dual_grid",
    "sample_on",
    "field_of_view",
    "reconstruct_q",
    "dbar_residual",
]

FILL_POLICIES = ("zero", "model")


def phase(x, k, time=0.0):
    """``exp(-i phi(x, k, time))``; at ``time = 0`` this is ``e_{-x}(k)``."""
    x = np.asarray(x, dtype=complex)
    k = np.asarray(k, dtype=complex)
    phi = 2.0 * (k * x).real + 2.0 * time * (k ** 3).real
    return np.exp(-1j * phi)


# ---------------------------------------------------------------------------
# data on the k-lattice
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DbarData:
    """``s(k)`` on a uniform square k-lattice.

    ``s`` is zero outside ``k_min <= |k| <= k_max``; inside the excised disk
    it is zero or the small-k model, depending on ``fill_policy``.
    ``cauchy`` selects the k-lattice Cauchy transform: ``"spectral"`` (exact
    truncated kernel, needs ``k_max <= K``) or ``"direct"`` (sampled kernel).
    """

    lattice: Grid2D
    s: np.ndarray = field(repr=False)
    k_min: float
    k_max: float
    fill_policy: str = "zero"
    fill_params: dict = field(default_factory=dict)
    cauchy: str = "spectral"
    time: float = 0.0

    def __post_init__(self):
        s = np.asarray(self.s, dtype=complex)
        if s.shape != self.lattice.shape:
            raise InputError(f"s has shape {s.shape}, lattice is {self.lattice.shape}")
        if not np.all(np.isfinite(s)):
            raise InputError("s must be finite")
        if self.fill_policy not in FILL_POLICIES:
            raise InputError(f"fill_policy must be one of {FILL_POLICIES}")
        if self.cauchy not in ("spectral", "direct"):
            raise InputError("cauchy must be 'spectral' or 'direct'")
        if self.cauchy == "spectral" and self.k_max > self.lattice.L * (1 + 1e-12):
            raise InputError("the spectral k-lattice transform needs k_max <= K")
        s = s.copy()
        s.setflags(write=False)
        object.__setattr__(self, "s", s)

    @property
    def m(self):
        return self.lattice.n

    @property
    def K(self):
        return self.lattice.L

    @cached_property
    def k(self):
        return self.lattice.z()

    def l2_mass(self) -> float:
        """Discrete ``sum |s|^2 dA``."""
        return float(np.sum(np.abs(self.s) ** 2) * self.lattice.cell_area)

    def with_time(self, time) -> "DbarData":
        """Same data with the evolution time carried in the phase."""
        return DbarData(self.lattice, self.s, self.k_min, self.k_max, self.fill_policy,
                        dict(self.fill_params), self.cauchy, float(time))

    def to_dict(self):
        return {"m": self.m, "K": self.K, "k_min": self.k_min, "k_max": self.k_max,
                "fill_policy": self.fill_policy, "fill_params": dict(self.fill_params),
                "cauchy": self.cauchy, "time": self.time, "l2_mass": self.l2_mass()}


def _polar_interpolator(sd: ScatteringData, values):
    p = sd.kgrid.params
    n_r, n_t = p["n_r"], p["n_theta"]
    radii = np.geomspace(p["k_min"], p["k_max"], n_r)
    th = p["theta0"] + 2 * np.pi * np.arange(n_t) / n_t
    th = np.mod(th, 2 * np.pi)
    order = np.argsort(th)
    V = values.reshape(n_r, n_t)
    # samples are sorted by angle in [0, 2 pi); align with ``th`` order
    th = th[order]
    # wrap one column on each side for periodic interpolation in theta
    th_ext = np.r_[th[-1] - 2 * np.pi, th, th[0] + 2 * np.pi]
    V_ext = np.concatenate([V[:, -1:], V, V[:, :1]], axis=1)
    interp = RegularGridInterpolator((np.log(radii), th_ext), V_ext, method="linear")
    return interp, radii


def build_dbar_data(sd: ScatteringData, m, K, k_min=1e-3, fill_policy="zero", *,
                    k_max=None, fill_params=None, cauchy="spectral") -> DbarData:
    """Transfer scattering data to the k-lattice ``Grid2D(m, K)``.

    Lattice data are copied node by node; polar data are interpolated
    bilinearly in ``(log|k|, angle)``.  ``k_max`` (default ``K``) truncates
    the data.  ``fill_policy="model"`` needs ``fill_params = {"a": ..,
    "c_inf": ..}`` and fills the excised disk with the small-k model.

    Raises
    ------
    CoverageError
        when the scan misses part of the annulus ``k_min <= |k| <= k_max``.
    """
    lat = Grid2D(int(m), float(K))
    k_max = float(K) if k_max is None else float(k_max)
    k_min = float(k_min)
    if not 0 < k_min < k_max:
        raise InputError("need 0 < k_min < k_max")
    if fill_policy not in FILL_POLICIES:
        raise InputError(f"fill_policy must be one of {FILL_POLICIES}")
    kz = lat.z()
    r = np.abs(kz)
    need = (r >= k_min) & (r <= k_max)
    t = np.zeros(lat.shape, dtype=complex)
    ks = sd.k
    if sd.kgrid.structure == "polar":
        interp, radii = _polar_interpolator(sd, sd.t)
        lo, hi = radii[0], radii[-1]
        eps = 1e-9
        if lo > k_min * (1 + eps) or hi < k_max * (1 - eps):
            raise CoverageError(
                f"scan covers |k| in [{lo:.6g}, {hi:.6g}] but [{k_min:.6g}, {k_max:.6g}]"
                " is required")
        rr = np.clip(r[need], lo, hi)
        th = np.mod(np.angle(kz[need]), 2 * np.pi)
        t[need] = interp(np.stack([np.log(rr), th], axis=1))
    else:
        hk = lat.h
        idx = np.rint((ks.real + K) / hk).astype(int), np.rint((ks.imag + K) / hk).astype(int)
        on = (np.abs(ks.real + K - idx[0] * hk) < 1e-9 * hk) & \
             (np.abs(ks.imag + K - idx[1] * hk) < 1e-9 * hk) & \
             (idx[0] >= 0) & (idx[0] < m) & (idx[1] >= 0) & (idx[1] < m)
        have = np.zeros(lat.shape, bool)
        have[idx[1][on], idx[0][on]] = True
        t[idx[1][on], idx[0][on]] = sd.t[on]
        missing = need & ~have
        if missing.any():
            rm = r[missing]
            raise CoverageError(
                f"{int(missing.sum())} lattice nodes without data, |k| in "
                f"[{rm.min():.6g}, {rm.max():.6g}]")
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(need, t / (4 * np.pi * np.conj(kz)), 0.0)
    params = dict(fill_params or {})
    if fill_policy == "model":
        from .asymptotics import smallk_model
        if "a" not in params or "c_inf" not in params:
            raise InputError("fill_policy='model' needs fill_params a and c_inf")
        inner = (r < k_min) & (r > 0)
        tm = smallk_model(kz[inner], params["a"], params["c_inf"])
        s[inner] = tm / (4 * np.pi * np.conj(kz[inner]))
    return DbarData(lat, s, k_min, k_max, fill_policy, params, cauchy)


# ---------------------------------------------------------------------------
# the operator T_x
# ---------------------------------------------------------------------------

class _KCauchy:
    """Cauchy transform on the k-lattice with a cached kernel."""

    def __init__(self, lattice: Grid2D, method):
        self.lattice = lattice
        self.method = method
        n = lattice.n
        if method == "spectral":
            self.sym = _cauchy_symbol_padded(n, lattice.L)
            self.off = n // 2
        else:
            self.sym = _cauchy_kernel_direct_hat(n, lattice.L)
            self.off = 0

    def padded(self, f):
        n, o = self.lattice.n, self.off
        big = np.zeros((2 * n, 2 * n), dtype=complex)
        big[o:o + n, o:o + n] = f
        return sfft.ifft2(sfft.fft2(big) * self.sym)

    def __call__(self, f):
        n, o = self.lattice.n, self.off
        return self.padded(f)[o:o + n, o:o + n]


_KC_CACHE = {}


def _kcauchy(dd: DbarData) -> _KCauchy:
    key = (dd.m, dd.K, dd.cauchy)
    if key not in _KC_CACHE:
        _KC_CACHE[key] = _KCauchy(dd.lattice, dd.cauchy)
    return _KC_CACHE[key]


def _coefficient(dd: DbarData, x, time=None):
    time = dd.time if time is None else time
    return phase(x, dd.k, time) * dd.s


def apply_Tx(dd: DbarData, x, time, g) -> np.ndarray:
    """``T_x g = dbar_k^{-1}(exp(-i phi) s conj(g))`` on the k-lattice."""
    g = np.asarray(g.values if isinstance(g, ComplexField) else g, dtype=complex)
    if g.shape != dd.lattice.shape:
        raise InputError("g must live on the k-lattice")
    return _kcauchy(dd)(_coefficient(dd, x, time) * np.conj(g))


@dataclass
class DbarSolution:
    x: complex
    time: float
    mu_k: ComplexField
    residual: float
    iterations: int = 0
    converged: bool = True
    history: list = field(default_factory=list, repr=False)


def _solve(dd, x, time, tol, restart, maxiter, x0=None):
    P = _coefficient(dd, x, time)
    kc = _kcauchy(dd)
    shape = dd.lattice.shape

    def T(g):
        return kc(P * np.conj(g))

    def matvec(v):
        w = v.view(complex).reshape(shape)
        return (w - T(w)).ravel().view(float)

    rhs = kc(P).ravel().view(float).copy()
    x0v = None if x0 is None else np.ascontiguousarray(x0, dtype=complex).ravel().view(float)
    res = gmres(matvec, rhs, x0=x0v, tol=tol, restart=restart, maxiter=maxiter)
    w = res.x.view(complex).reshape(shape)
    return w, res


def solve_mu_inverse(dd: DbarData, x, time=None, tol=1e-10, *, restart=40, maxiter=400,
                     x0=None) -> DbarSolution:
    """Solve ``(I - T_x)(mu - 1) = T_x 1`` by real-linear GMRES.

    Raises
    ------
    SolverError
        when GMRES does not reach ``tol``; the residual history is attached.
    """
    time = dd.time if time is None else float(time)
    x = complex(x)
    if not np.any(dd.s):
        return DbarSolution(x, time, ComplexField(dd.lattice, np.ones(dd.lattice.shape)), 0.0)
    w, res = _solve(dd, x, time, tol, restart, maxiter, x0)
    if not res.converged:
        raise SolverError(f"d-bar solve at x={x} stalled at residual {res.residual:.2e}",
                          residual_history=res.history)
    return DbarSolution(x, time, ComplexField(dd.lattice, 1.0 + w), float(res.residual),
                        res.iterations, True, res.history)


def dbar_residual(dd: DbarData, sol: DbarSolution) -> float:
    """A-posteriori residual of ``dbar_k mu = exp(-i phi) s conj(mu)``.

    ``mu - 1`` is extended off the lattice by the Cauchy transform of the
    right side on the padded k-grid, differentiated spectrally and compared
    with the right side on the support of ``s``.  The derivative keeps the
    Nyquist modes: the singular ``1/conj(k)`` factor of ``s`` puts real
    weight there, and dropping it would show up as a spurious error along
    the axes through ``k = 0``.
    """
    if not np.any(dd.s):
        return 0.0
    if dd.cauchy != "spectral":
        raise InputError("the spectral residual needs cauchy='spectral'")
    return _eq_residual(dd, sol.x, sol.time, sol.mu_k.values)


def _eq_residual(dd, x, time, mu):
    rhs = _coefficient(dd, x, time) * np.conj(mu)
    kc = _kcauchy(dd)
    n, o = dd.m, kc.off
    W = kc.padded(rhs)
    W[o:o + n, o:o + n] = mu - 1.0
    xi1, xi2 = dd.lattice.padded().freqs()
    lhs = sfft.ifft2(sfft.fft2(W) * (0.5j * (xi1 + 1j * xi2)))[o:o + n, o:o + n]
    supp = dd.s != 0
    return float(np.linalg.norm((lhs - rhs)[supp]) / np.linalg.norm(rhs[supp]))


def expansion_coeff_a1(dd: DbarData, x, time=None, mu_k=None) -> complex:
    """``a1(x) = (1/pi) sum exp(-i phi) s conj(mu) dA`` over the k-lattice."""
    time = dd.time if time is None else float(time)
    if mu_k is None:
        mu_k = solve_mu_inverse(dd, x, time).mu_k
    mu = mu_k.values if isinstance(mu_k, ComplexField) else np.asarray(mu_k)
    P = _coefficient(dd, x, time)
    return complex(np.sum(P * np.conj(mu)) * dd.lattice.cell_area / np.pi)


# ---------------------------------------------------------------------------
# reconstruction over an x-grid
# ---------------------------------------------------------------------------

def _row_task(args):
    dd, xs, time, tol, restart, maxiter = args
    out = np.empty(xs.size, complex)
    its = np.empty(xs.size, int)
    res = np.empty(xs.size)
    eq = np.full(xs.size, np.nan)
    ok = np.ones(xs.size, bool)
    check = dd.cauchy == "spectral"
    w = None
    dA = dd.lattice.cell_area / np.pi
    for j, x in enumerate(xs):
        try:
            w_new, r = _solve(dd, x, time, tol, restart, maxiter, w)
        except (ArithmeticError, ValueError):
            ok[j] = False
            out[j], its[j], res[j] = 0j, 0, np.inf
            continue
        if not r.converged:
            ok[j] = False
        w = w_new
        P = _coefficient(dd, x, time)
        out[j] = np.sum(P * np.conj(1.0 + w)) * dA
        its[j], res[j] = r.iterations, r.residual
        if check:
            eq[j] = _eq_residual(dd, x, time, 1.0 + w)
    return out, its, res, eq, ok


def a1_field(dd: DbarData, grid_x: Grid2D, time=None, *, tol=1e-10, restart=40,
             maxiter=400, workers=1, progress=None):
    """``a1`` on every node of ``grid_x``.

    Each row of the x-grid is one task; within a row each solve starts from
    the previous solution.  Rows are independent, so the result does not
    depend on ``workers``.  Returns ``(a1, iterations, residuals,
    eq_residuals, ok)``; ``eq_residuals`` holds :func:`dbar_residual` of every
    solve (NaN for ``cauchy="direct"``).
    """
    time = dd.time if time is None else float(time)
    X = grid_x.z()
    n = grid_x.n
    a1 = np.zeros(grid_x.shape, complex)
    its = np.zeros(grid_x.shape, int)
    res = np.zeros(grid_x.shape)
    eq = np.zeros(grid_x.shape)
    ok = np.ones(grid_x.shape, bool)
    if not np.any(dd.s):
        return a1, its, res, eq, ok
    tasks = [(dd, X[i], time, tol, restart, maxiter) for i in range(n)]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = ex.map(_row_task, tasks)
            for i, r in enumerate(results):
                a1[i], its[i], res[i], eq[i], ok[i] = r
                if progress:
                    progress(i + 1, n)
    else:
        for i, t in enumerate(tasks):
            a1[i], its[i], res[i], eq[i], ok[i] = _row_task(t)
            if progress:
                progress(i + 1, n)
    return a1, its, res, eq, ok


def dual_grid(dd: DbarData, x_n: int = 64) -> Grid2D:
    """The x-grid whose period is the Fourier dual of the k-lattice spacing.

    ``exp(-i phi)`` on lattice nodes is periodic in ``x`` with period
    ``pi / h_k``, so the lattice d-bar problem, and with it ``a1``, is
    periodic on this box.  The spectral ``dbar_x`` is then consistent with
    the k-quadrature.
    """
    h_k = 2.0 * dd.K / dd.m
    return Grid2D(int(x_n), np.pi / (2.0 * h_k))


def sample_on(q, grid_x: Grid2D) -> np.ndarray:
    """Values of ``q`` at the nodes of ``grid_x``.

    Trigonometric interpolation inside the box of ``q`` and zero outside it
    (``q`` is taken to vanish beyond its box, not to repeat periodically).
    """
    f = q.q if isinstance(q, Potential) else q
    z = grid_x.z()
    x1, x2 = z[0, :].real, z[:, 0].imag
    out = trig_resample(f, x1, x2)
    L = f.grid.L
    inside = (np.abs(x1) <= L)[None, :] & (np.abs(x2) <= L)[:, None]
    return np.where(inside, out, 0.0)


FOV_INNER = 0.5
FOV_OUTER = 0.7


def field_of_view(grid: Grid2D, q_complex, inner=FOV_INNER, outer=FOV_OUTER):
    """Restore the zero mode and taper the reconstruction outside the field of view.

    At ``x`` the d-bar integrand oscillates in ``k`` with frequency up to
    about ``2(|x| + R)`` for a potential of radius ``R``; the k-lattice
    resolves this only while ``|x| < pi / (2 h_k) - R``.  Inside that disk
    the periodic reconstruction equals ``q`` up to one constant (the zero
    Fourier mode, lost with the excised origin).  The constant is the median
    over the annulus ``inner L < |x| < outer L``, and the result is rolled off
    to zero across the same annulus.  Returns ``(q, constant)``.
    """
    r = np.abs(grid.z())
    zone = (r > inner * grid.L) & (r < outer * grid.L)
    off = complex(np.median(q_complex.real[zone]), np.median(q_complex.imag[zone]))
    return (q_complex - off) * smooth_window(grid, inner * grid.L, outer * grid.L), off


@dataclass
class Reconstruction:
    """Output of :func:`reconstruct_q`."""

    q: Potential
    q_complex: ComplexField
    a1: ComplexField
    imag_ratio: float
    iterations: np.ndarray = field(repr=False)
    residuals: np.ndarray = field(repr=False)
    holes: np.ndarray = field(repr=False)
    zero_mode: complex = 0j
    time: float = 0.0
    eq_residuals: np.ndarray = field(default=None, repr=False)

    @property
    def n_holes(self):
        return int(self.holes.sum())

    def report(self) -> dict:
        return {
            "grid": self.q.grid.to_dict(),
            "time": self.time,
            "imag_ratio": self.imag_ratio,
            "max_residual": float(np.max(self.residuals)) if self.residuals.size else 0.0,
            "max_iterations": int(np.max(self.iterations)) if self.iterations.size else 0,
            "max_dbar_residual": (float(np.nanmax(self.eq_residuals))
                                  if self.eq_residuals is not None
                                  and np.any(np.isfinite(self.eq_residuals)) else None),
            "holes": self.n_holes,
            "zero_mode": [self.zero_mode.real, self.zero_mode.imag],
            "field_of_view": [FOV_INNER * self.q.grid.L, FOV_OUTER * self.q.grid.L],
        }


def reconstruct_q(dd: DbarData, grid_x: Grid2D = None, time=None, *, tol=1e-10, workers=1,
                  progress=None, strict=True) -> Reconstruction:
    """``q = 4 i dbar_x a1`` on ``grid_x`` (default ``dual_grid(dd, 64)``).

    ``grid_x`` must have the half-side of :func:`dual_grid`; its node count
    is free.  The real part is returned as a :class:`Potential`; the
    relative size of the imaginary part is reported as ``imag_ratio``.
    Failed solves leave holes (``a1 = 0``); with ``strict=True`` they raise
    :class:`SolverError` listing the count.
    """
    time = dd.time if time is None else float(time)
    dual = dual_grid(dd, grid_x.n if grid_x is not None else 64)
    if grid_x is None:
        grid_x = dual
    elif not np.isclose(grid_x.L, dual.L, rtol=1e-12, atol=0.0):
        raise InputError(f"x-grid half-side must be {dual.L!r} (dual to the k-lattice), "
                         f"got {grid_x.L!r}")
    a1, its, res, eq, ok = a1_field(dd, grid_x, time, tol=tol, workers=workers,
                                    progress=progress)
    holes = ~ok
    if strict and holes.any():
        raise SolverError(f"{int(holes.sum())} x-nodes failed in the d-bar solve")
    sym = _first_order_symbols(grid_x)[0]
    qc, off = field_of_view(grid_x, 4j * sfft.ifft2(sfft.fft2(a1) * sym))
    nrm = np.linalg.norm(qc)
    imag_ratio = float(np.linalg.norm(qc.imag) / nrm) if nrm > 0 else 0.0
    q = Potential(RealField(grid_x, qc.real), "unknown",
                  {"kind": "potential_reconstructed", "time": time})
    return Reconstruction(q, ComplexField(grid_x, qc), ComplexField(grid_x, a1), imag_ratio,
                          its, res, holes, off, time, eq)


def reconstruction_report_text(rec: Reconstruction, dd: DbarData, extra=None) -> str:
    rep = {"reconstruction": rec.report(), "dbar": dd.to_dict()}
    if extra:
        rep.update(extra)
    return json.dumps(rep, sort_keys=True, indent=2) + "\n"
