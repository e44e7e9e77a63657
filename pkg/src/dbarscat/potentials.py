"""Test potentials, the positive zero-energy solution and classification.

Three families matter here:

* critical potentials ``q = gamma^{-1/2} Laplacian(gamma^{1/2})`` built from a
  conductivity ``gamma`` that equals one near the box edge;
* subcritical potentials obtained by adding a non-negative bump to a
  critical one;
* supercritical potentials, for which ``-Laplacian + q`` has negative
  spectrum.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh

from .errors import (
    DegenerateConstantError,
    DomainError,
    InputError,
    NotPositiveError,
)
from .grid import (
    BOUNDARY_MASS_THRESHOLD,
    BoundaryMassWarning,
    Grid2D,
    RealField,
    boundary_mass_ratio,
    convolve_G0,
    spectral_laplacian,
    trig_resample,
)
from .krylov import gmres

__all__ = [
    "LABELS",
    "Potential",
    "SubcriticalProfile",
    "Classification",
    "gaussian",
    "conductivity_potential",
    "add_bump",
    "solve_psi0",
    "rescale",
    "lowest_eigenvalue",
    "classify",
]

LABELS = ("critical", "subcritical", "supercritical", "unknown")


@dataclass(frozen=True)
class Potential:
    """A real potential on a grid with its label and construction record."""

    q: RealField
    label: str = "unknown"
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.q, RealField):
            raise InputError("Potential.q must be a RealField")
        if self.label not in LABELS:
            raise InputError(f"label must be one of {LABELS}, got {self.label!r}")
        object.__setattr__(self, "provenance", dict(self.provenance))

    @property
    def grid(self) -> Grid2D:
        return self.q.grid

    @property
    def values(self) -> np.ndarray:
        return self.q.values

    @property
    def boundary_mass(self) -> float:
        return boundary_mass_ratio(self.q)

    def l1_norm(self) -> float:
        return float(np.abs(self.q.values).sum() * self.grid.cell_area)

    @classmethod
    def from_array(cls, grid, values, label="unknown", **provenance):
        return cls(RealField(grid, values), label, provenance)

    def with_label(self, label):
        return replace(self, label=label)


def as_potential(q) -> Potential:
    """Accept a Potential or a bare RealField."""
    if isinstance(q, Potential):
        return q
    if isinstance(q, RealField):
        return Potential(q)
    raise InputError("expected a Potential or RealField")


@dataclass(frozen=True)
class SubcriticalProfile:
    """``psi0`` with ``psi0 = c_inf - G0 * (q psi0)`` and its constants.

    ``a_farfield`` is the slope of a least-squares fit of ``psi0`` against
    ``log|x|`` on the outer annulus; it cross-checks ``a``.
    """

    psi0: RealField
    a: float
    c_inf: float
    residual: float
    a_farfield: float = float("nan")
    rescaled_by: float = 1.0
    iterations: int = 0


@dataclass(frozen=True)
class Classification:
    label: str
    min_eigenvalue: float
    a: float = float("nan")
    a_tol: float = float("nan")
    c_inf: float = float("nan")
    detail: str = ""

    def to_dict(self):
        return {
            "label": self.label,
            "min_eigenvalue": self.min_eigenvalue,
            "a": self.a,
            "a_tol": self.a_tol,
            "c_inf": self.c_inf,
            "detail": self.detail,
        }


def gaussian(grid: Grid2D, amplitude=1.0, center=0j, width=1.0) -> np.ndarray:
    """``amplitude * exp(-|x - center|^2 / width^2)`` on the grid nodes."""
    r2 = np.abs(grid.z() - complex(center)) ** 2
    return amplitude * np.exp(-r2 / width ** 2)


def _edge_flatness(values, grid):
    return float(np.max(np.abs(values[grid.annulus_mask(0.125)] - 1.0)))


def conductivity_potential(gamma) -> Potential:
    """``q = gamma^{-1/2} Laplacian(gamma^{1/2})``, labelled critical.

    Raises
    ------
    DomainError
        If ``gamma`` is not strictly positive.
    """
    if not isinstance(gamma, RealField):
        raise InputError("gamma must be a RealField")
    g = gamma.values
    if np.any(g <= 0):
        raise DomainError("conductivity must be strictly positive")
    flat = _edge_flatness(g, gamma.grid)
    if flat > BOUNDARY_MASS_THRESHOLD:
        warnings.warn(
            f"conductivity deviates from 1 by {flat:.2e} near the boundary",
            BoundaryMassWarning, stacklevel=2)
    u = RealField(gamma.grid, np.sqrt(g))
    q = spectral_laplacian(u).values / u.values
    return Potential(RealField(gamma.grid, q), "critical",
                     {"construction": "conductivity", "gamma_edge_deviation": flat})


def add_bump(q, w) -> Potential:
    """Add a non-negative, non-zero bump ``w`` to ``q``."""
    q = as_potential(q)
    if isinstance(w, RealField):
        if w.grid != q.grid:
            raise InputError("bump lives on a different grid")
        wv = w.values
    else:
        wv = np.asarray(w, float)
        if wv.shape != q.grid.shape:
            raise InputError("bump has the wrong shape")
    if np.any(wv < 0):
        raise DomainError("bump must be non-negative")
    if not np.any(wv > 0):
        raise DomainError("bump must not vanish identically")
    label = "subcritical" if q.label in ("critical", "subcritical") else "unknown"
    prov = dict(q.provenance)
    prov["bump_mass"] = float(wv.sum() * q.grid.cell_area)
    prov["construction"] = str(prov.get("construction", "base")) + "+bump"
    return Potential(RealField(q.grid, q.values + wv), label, prov)


def _far_field_slope(psi, grid):
    r = np.abs(grid.z())
    mask = (r > 0.75 * grid.L) & (r < grid.L)
    A = np.stack([np.log(r[mask]), np.ones(mask.sum())], axis=1)
    coef, *_ = np.linalg.lstsq(A, psi[mask], rcond=None)
    return float(coef[0])


def _psi0_once(q: Potential, tol, maxiter):
    grid = q.grid
    qv = q.values

    def matvec(v):
        v = v.reshape(grid.shape)
        return (v + convolve_G0(RealField(grid, qv * v)).values).ravel()

    b = np.ones(grid.n * grid.n)
    res = gmres(matvec, b, tol=tol, restart=50, maxiter=maxiter)
    return res


def solve_psi0(q, tol=1e-10, *, maxiter=600, cond_limit=1e8) -> SubcriticalProfile:
    """Solve ``psi = 1 - G0 * (q psi)`` (normalization ``c_inf = 1``).

    When the operator is (numerically) singular the potential is rescaled
    by ``r = e`` and the constants are mapped back with
    ``c_inf^r = c_inf + a log r``.
    """
    q = as_potential(q)
    grid = q.grid
    if not np.any(q.values):
        return SubcriticalProfile(RealField(grid, np.ones(grid.shape)), 0.0, 1.0, 0.0, 0.0)
    res = _psi0_once(q, tol, maxiter)
    r_used = 1.0
    if not res.converged or res.cond_estimate > cond_limit:
        r_used = float(np.e)
        qr = rescale(q, r_used, _warn=False)
        res_r = _psi0_once(qr, tol, maxiter)
        if not res_r.converged or res_r.cond_estimate > cond_limit:
            raise DegenerateConstantError(
                "psi0 operator singular after rescale", res_r.history)
        # Psi(y) = psi_r(y / r) solves the original problem with constants
        # a = a_r and c_inf = 1 - a_r log r.  Interpolation is only needed on
        # the support of q; one more fixed-point sweep restores the far field.
        psi_r = res_r.x.real.reshape(grid.shape)
        a_r = float(np.sum(qr.values * psi_r) * grid.cell_area / (2 * np.pi))
        c_inf = 1.0 - a_r * np.log(r_used)
        nodes = grid.nodes() / r_used
        Psi = trig_resample(RealField(grid, psi_r), nodes, nodes)
        Psi = c_inf - convolve_G0(RealField(grid, q.values * Psi)).values
        resid = _psi0_residual(q, Psi, c_inf)
        return _finish(q, Psi, a_r, c_inf, resid, r_used, res_r.iterations)
    psi = res.x.real.reshape(grid.shape)
    a = float(np.sum(q.values * psi) * grid.cell_area / (2 * np.pi))
    resid = _psi0_residual(q, psi, 1.0)
    return _finish(q, psi, a, 1.0, resid, r_used, res.iterations)


def _psi0_residual(q, psi, c_inf):
    grid = q.grid
    r = psi - c_inf + convolve_G0(RealField(grid, q.values * psi)).values
    return float(np.linalg.norm(r) / np.linalg.norm(psi))


def _finish(q, psi, a, c_inf, resid, r_used, iters):
    grid = q.grid
    if np.min(psi) <= 0:
        raise NotPositiveError(
            f"psi0 has minimum {np.min(psi):.3e} <= 0: likely supercritical")
    slope = _far_field_slope(psi, grid)
    return SubcriticalProfile(RealField(grid, psi), float(a), float(c_inf), resid,
                              slope, r_used, int(iters))


def rescale(q, r, *, _warn=True) -> Potential:
    """``q_r(x) = r^2 q(r x)`` by trigonometric interpolation.

    ``r = 2`` hits grid points exactly when ``n`` is even, because ``r x_j``
    is again a node (or lies outside the box, where ``q`` vanishes).
    """
    q = as_potential(q)
    r = float(r)
    if not r > 0:
        raise DomainError("scale factor must be positive")
    grid = q.grid
    if r == 1.0:
        return Potential(q.q, q.label, {**q.provenance, "scale": 1.0})
    nodes = grid.nodes() * r
    inside = (nodes >= -grid.L) & (nodes < grid.L)
    vals = np.zeros(grid.shape)
    sub = trig_resample(q.q, nodes[inside], nodes[inside])
    ii = np.where(inside)[0]
    vals[np.ix_(ii, ii)] = sub
    if r > 1 and float(r).is_integer() and grid.n % 2 == 0:
        # exact node hits: copy samples directly to avoid interpolation error
        j = np.arange(grid.n)
        src = (j - grid.n // 2) * int(r) + grid.n // 2
        ok = (src >= 0) & (src < grid.n)
        vals = np.zeros(grid.shape)
        vals[np.ix_(j[ok], j[ok])] = q.values[np.ix_(src[ok], src[ok])]
    vals *= r * r
    out = Potential(RealField(grid, vals), q.label,
                    {**q.provenance, "scale": r * float(q.provenance.get("scale", 1.0))})
    if _warn:
        ratio = out.boundary_mass
        if ratio > BOUNDARY_MASS_THRESHOLD:
            warnings.warn(f"rescaled potential has boundary mass {ratio:.2e}",
                          BoundaryMassWarning, stacklevel=2)
    return out


def lowest_eigenvalue(q, tol=1e-10) -> float:
    """Smallest eigenvalue of the spectral ``-Laplacian + q`` (Lanczos)."""
    q = as_potential(q)
    grid = q.grid
    xi1, xi2 = grid.freqs()
    lap = xi1 ** 2 + xi2 ** 2
    qv = q.values
    N = grid.n * grid.n

    def mv(v):
        v = v.reshape(grid.shape)
        out = np.fft.ifft2(np.fft.fft2(v) * lap).real + qv * v
        return out.ravel()

    op = LinearOperator((N, N), matvec=mv, dtype=float)
    v0 = np.exp(-np.abs(grid.z()) ** 2 / 4).ravel()
    # a single requested eigenpair can lock onto the wrong Ritz value when the
    # bottom of the spectrum is clustered, so ask for a few and take the least
    vals = eigsh(op, k=4, which="SA", tol=tol, v0=v0, ncv=40,
                 return_eigenvectors=False, maxiter=20 * N)
    return float(np.min(vals))


def classify(q, *, tol_eig=1e-6, a_tol=None, gray=0.5) -> Classification:
    """Label a potential as supercritical, subcritical, critical or unknown.

    ``gray`` widens the critical/subcritical threshold into an ambiguity
    band ``[(1 - gray) a_tol, (1 + gray) a_tol]`` that yields ``unknown``.
    """
    q = as_potential(q)
    lam = lowest_eigenvalue(q)
    if lam < -tol_eig:
        return Classification("supercritical", lam, detail="negative eigenvalue")
    if a_tol is None:
        a_tol = 1e-3 * (1.0 + q.l1_norm())
    try:
        prof = solve_psi0(q)
    except NotPositiveError as exc:
        return Classification("unknown", lam, a_tol=a_tol, detail=str(exc))
    a = prof.a
    if a > (1 + gray) * a_tol:
        label = "subcritical"
    elif abs(a) <= (1 - gray) * a_tol:
        label = "critical"
    else:
        label = "unknown"
    return Classification(label, lam, a, a_tol, prof.c_inf,
                          detail=f"psi0 residual {prof.residual:.2e}")
