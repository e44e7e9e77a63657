"""Complex geometric optics solutions and the scattering transform.

For each ``k != 0`` the function ``mu(x, k) = exp(-i k x) psi(x, k)`` solves
the Lippmann-Schwinger equation

    mu + g_k * (q mu) = 1,

whose solution satisfies ``dbar (d + i k) mu = q mu / 4``.  The convolution
is applied matrix-free with FFTs over the support box of ``q`` (enlarged by a
margin) and the system is solved with restarted GMRES.

Quantities computed from ``mu``::

    t(k)   = int exp(i (k x + conj(k x))) q(x) mu(x, k) dx
    tau(k) = int q(x) mu(x, k) dx
    mu~    = mu / (1 + ell(k) tau(k))
"""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft

from .errors import DomainError, InputError, SingularRenormalizationError
from .greens import ell, gk_cell_average_origin, gk_values
from .grid import ComplexField, Grid2D, smooth_window, spectral_upsample
from .krylov import gmres
from .potentials import Potential, as_potential

__all__ = [
    "STATUSES",
    "CGOField",
    "KGrid",
    "ScatteringData",
    "solve_mu",
    "scattering_t",
    "tau",
    "mu_tilde",
    "pde_residual",
    "needs_refinement",
    "RESOLUTION_LIMIT",
    "scan_k",
    "write_scattering_csv",
    "read_scattering_csv",
    "scattering_csv_text",
]

STATUSES = ("converged", "suspected-exceptional", "failed")
SUPPORT_THRESHOLD = 1e-11
DEFAULT_MARGIN = 2
# largest |k| h handled on the native grid; beyond it solve_mu refines
RESOLUTION_LIMIT = 0.25


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------

@dataclass
class CGOField:
    """``mu(., k)`` on the grid together with solver diagnostics."""

    grid: Grid2D
    k: complex
    mu: ComplexField
    residual_LS: float
    residual_PDE: float
    iterations: int
    status: str = "converged"
    cond_estimate: float = 1.0
    box: tuple = None


class KGrid:
    """An ordered set of nonzero spectral parameters.

    Use :meth:`polar` for a log-radial by angular grid and :meth:`lattice` for
    the nodes of a uniform square lattice (as used by the d-bar solver).
    Samples are always sorted by ``(|k|, angle)``.
    """

    def __init__(self, samples, structure="custom", params=None):
        k = np.atleast_1d(np.asarray(samples, dtype=complex)).ravel()
        if k.size == 0:
            raise InputError("a KGrid needs at least one sample")
        if np.any(k == 0):
            raise InputError("k = 0 is excluded from every KGrid")
        if not np.all(np.isfinite(k)):
            raise InputError("k samples must be finite")
        order = np.lexsort((np.mod(np.angle(k), 2 * np.pi), np.abs(k)))
        k = k[order]
        if np.unique(k).size != k.size:
            raise InputError("duplicate k samples")
        self.samples = k
        self.structure = structure
        self.params = dict(params or {})

    def __len__(self):
        return self.samples.size

    @classmethod
    def polar(cls, k_min, k_max, n_r, n_theta, theta0=None):
        """``n_r`` radii geometric in ``[k_min, k_max]`` times ``n_theta`` angles.

        The default angular offset is half a step, which keeps samples off
        the coordinate axes.
        """
        if not 0 < k_min < k_max or not np.isfinite(k_max):
            raise InputError("need 0 < k_min < k_max < inf")
        if n_r < 2 or n_theta < 1:
            raise InputError("need n_r >= 2 and n_theta >= 1")
        radii = np.geomspace(k_min, k_max, int(n_r))
        if theta0 is None:
            theta0 = np.pi / n_theta
        th = theta0 + 2 * np.pi * np.arange(int(n_theta)) / n_theta
        k = (radii[:, None] * np.exp(1j * th[None, :])).ravel()
        return cls(k, "polar", {"k_min": k_min, "k_max": k_max, "n_r": int(n_r),
                                "n_theta": int(n_theta), "theta0": float(theta0)})

    @classmethod
    def lattice(cls, m, K, k_min=0.0, k_max=None):
        """Nodes ``-K + j 2K/m`` of the square lattice with ``k_min <= |k| <= k_max``."""
        kg = Grid2D(m, K)
        z = kg.z().ravel()
        k_max = K * np.sqrt(2) if k_max is None else k_max
        keep = (np.abs(z) >= k_min) & (np.abs(z) <= k_max) & (z != 0)
        return cls(z[keep], "lattice", {"m": int(m), "K": float(K), "k_min": float(k_min),
                                        "k_max": float(k_max)})

    @property
    def radii(self):
        if self.structure != "polar":
            raise InputError("radii are defined for polar grids only")
        p = self.params
        return np.geomspace(p["k_min"], p["k_max"], p["n_r"])

    def to_dict(self):
        return {"structure": self.structure, **self.params, "size": len(self)}


@dataclass
class ScatteringData:
    """``t`` and ``tau`` on a :class:`KGrid` with per-sample diagnostics."""

    kgrid: KGrid
    t: np.ndarray
    tau: np.ndarray
    status: np.ndarray
    iterations: np.ndarray
    residual: np.ndarray
    residual_pde: np.ndarray = None
    cond: np.ndarray = None
    meta: dict = field(default_factory=dict)

    @property
    def k(self):
        return self.kgrid.samples

    def n_flagged(self):
        return int(np.sum(self.status != "converged"))

    def s(self):
        """``s(k) = t(k) / (4 pi conj(k))``."""
        return self.t / (4 * np.pi * np.conj(self.k))


# ---------------------------------------------------------------------------
# box convolution with the Faddeev kernel
# ---------------------------------------------------------------------------

def _support_box(qv, threshold, margin, n):
    mag = np.abs(qv)
    peak = mag.max()
    if peak == 0:
        return None
    rows = np.where(mag.max(axis=1) > threshold * peak)[0]
    cols = np.where(mag.max(axis=0) > threshold * peak)[0]
    r0 = max(rows[0] - margin, 0)
    r1 = min(rows[-1] + 1 + margin, n)
    c0 = max(cols[0] - margin, 0)
    c1 = min(cols[-1] + 1 + margin, n)
    return (r0, r1, c0, c1)


class _KernelSamples:
    """``g_k`` at the offsets ``(i + 1j j) h`` for ``i, j`` in inclusive ranges.

    One table per ``k`` serves every convolver of a solve: a grid of spacing
    ``h`` contains the offsets of spacing ``2h`` at even indices.  The origin
    entry is left at zero; each convolver sets its own cell average.
    """

    def __init__(self, h, k, rows, cols):
        self.h = h
        self.r0, self.c0 = rows[0], cols[0]
        offr = np.arange(rows[0], rows[1] + 1) * h
        offc = np.arange(cols[0], cols[1] + 1) * h
        z = offc[None, :] + 1j * offr[:, None]
        zero = z == 0
        self.vals = gk_values(np.where(zero, 1.0, z), k)
        self.vals[zero] = 0.0

    def take(self, dr, dc, stride=1):
        return self.vals[np.ix_(dr * stride - self.r0, dc * stride - self.c0)]


def _offset_range(src, out):
    """Inclusive offset ranges (rows, cols) met by a convolution ``src -> out``."""
    r0, r1, c0, c1 = src
    o0, o1, p0, p1 = out
    return ((o0 - r1 + 1, o1 - 1 - r0), (p0 - c1 + 1, p1 - 1 - c0))


class _BoxConvolver:
    """Discrete convolution ``h^2 sum_y g_k(x - y) f(y)`` from one box to another."""

    def __init__(self, grid, k, src, out, samples=None, stride=1):
        self.grid = grid
        r0, r1, c0, c1 = src
        o0, o1, p0, p1 = out
        na, nb = r1 - r0, c1 - c0
        ma, mb = o1 - o0, p1 - p0
        P = sfft.next_fast_len(na + ma - 1)
        Q = sfft.next_fast_len(nb + mb - 1)
        h = grid.h
        dr = np.arange(-(na - 1), ma)
        dc = np.arange(-(nb - 1), mb)
        if samples is None:
            rows, cols = _offset_range(src, out)
            samples = _KernelSamples(h, k, rows, cols)
            stride = 1
        vals = samples.take(dr + (o0 - r0), dc + (p0 - c0), stride)
        zr = np.flatnonzero(dr + (o0 - r0) == 0)
        zc = np.flatnonzero(dc + (p0 - c0) == 0)
        if zr.size and zc.size:
            vals[zr[0], zc[0]] = gk_cell_average_origin(h, k)
        ker = np.zeros((P, Q), dtype=complex)
        ker[np.ix_(dr % P, dc % Q)] = vals * (h * h)
        self.khat = sfft.fft2(ker)
        self.P, self.Q = P, Q
        self.na, self.nb, self.ma, self.mb = na, nb, ma, mb

    def __call__(self, f):
        buf = np.zeros((self.P, self.Q), dtype=complex)
        buf[:self.na, :self.nb] = f
        return sfft.ifft2(sfft.fft2(buf) * self.khat)[:self.ma, :self.mb]


def _spectral_dbar_d_ik(v, h, k):
    na, nb = v.shape
    xi2 = 2 * np.pi * sfft.fftfreq(na, d=h)[:, None]
    xi1 = 2 * np.pi * sfft.fftfreq(nb, d=h)[None, :]
    sym = 0.5j * (xi1 + 1j * xi2) * (0.5j * (xi1 - 1j * xi2) + 1j * k)
    if na % 2 == 0:
        sym[na // 2, :] = 0
    if nb % 2 == 0:
        sym[:, nb // 2] = 0
    return sfft.ifft2(sfft.fft2(v) * sym)


def pde_residual(q, cgo: CGOField, *, inner=0.55, outer=0.99) -> float:
    """Relative residual of ``dbar (d + i k) mu = q mu / 4`` on the whole grid.

    Constants lie in the kernel of ``dbar (d + i k)``, so the mean of
    ``mu - 1`` over the annulus ``inner*L < |x| < outer*L`` is removed before
    a smooth radial window makes the data periodic.  The comparison is made
    on the disk ``|x| <= inner*L`` where the window equals one.  Needs the
    full-grid ``mu`` (``solve_mu(..., full=True)``).
    """
    q = as_potential(q)
    grid = q.grid
    if cgo.box is None:
        return 0.0
    r = np.abs(grid.z())
    ri, ro = inner * grid.L, outer * grid.L
    u = cgo.mu.values - 1.0
    band = (r > ri) & (r < ro)
    w = smooth_window(grid, ri, ro)
    lhs = _spectral_dbar_d_ik(w * (u - u[band].mean()), grid.h, cgo.k)
    rhs = q.values * cgo.mu.values / 4.0
    disk = r <= ri
    den = np.linalg.norm(rhs[disk])
    return float(np.linalg.norm((lhs - rhs)[disk]) / den) if den > 0 else 0.0


# ---------------------------------------------------------------------------
# solves
# ---------------------------------------------------------------------------

def _solve_box(qv, grid, k, box, tol, restart, maxiter, samples=None, stride=1):
    r0, r1, c0, c1 = box
    qb = qv[r0:r1, c0:c1]
    conv = _BoxConvolver(grid, k, box, box, samples, stride)
    shape = qb.shape

    def matvec(v):
        v = v.reshape(shape)
        return (v + conv(qb * v)).ravel()

    rhs = -conv(qb.astype(complex)).ravel()
    res = gmres(matvec, rhs, tol=tol, restart=restart, maxiter=maxiter)
    return conv, res


def needs_refinement(grid: Grid2D, k) -> bool:
    """True when ``|k| h`` exceeds :data:`RESOLUTION_LIMIT`."""
    return abs(complex(k)) * grid.h > RESOLUTION_LIMIT


def solve_mu(q, k, tol=1e-10, *, restart=30, maxiter=500, full=True,
             margin=DEFAULT_MARGIN, refine="auto") -> CGOField:
    """Solve the Lippmann-Schwinger equation for ``mu(., k)``.

    The unknown is ``v = mu - 1`` on the support box of ``q`` enlarged by
    ``margin`` nodes; ``(I + g_k * (q .)) v = -g_k * q`` is solved with GMRES.
    With ``full=True`` the solution is extended to the whole grid by one
    more convolution and the PDE residual is measured.

    The sampled kernel oscillates with wavenumber ``2|k|``.  Once ``|k| h``
    passes :data:`RESOLUTION_LIMIT` (or with ``refine=True``) the problem is
    solved a second time on the spectrally upsampled grid of spacing
    ``h/2`` and the two solutions are combined by Richardson extrapolation,
    which removes the leading ``h^4`` error term.  ``refine=False`` disables
    this.

    Returns a :class:`CGOField` whose status is ``"suspected-exceptional"``
    when GMRES stalls and ``"failed"`` on non-finite output.
    """
    q = as_potential(q)
    k = complex(k)
    if k == 0:
        raise DomainError("k = 0 is excluded")
    grid = q.grid
    if not np.any(q.values):
        mu = ComplexField(grid, np.ones(grid.shape))
        return CGOField(grid, k, mu, 0.0, 0.0, 0, "converged", 1.0, None)
    if refine == "auto":
        refine = needs_refinement(grid, k)
    box = _support_box(q.values, SUPPORT_THRESHOLD, margin, grid.n)
    r0, r1, c0, c1 = box
    qv = q.values
    whole = (0, grid.n, 0, grid.n)
    rows, cols = _offset_range(box, whole if full else box)
    if refine:
        samples = _KernelSamples(grid.h / 2, k, (2 * rows[0], 2 * rows[1]),
                                 (2 * cols[0], 2 * cols[1]))
        stride = 2
    else:
        samples, stride = _KernelSamples(grid.h, k, rows, cols), 1
    conv, res = _solve_box(qv, grid, k, box, tol, restart, maxiter, samples, stride)
    v = res.x.reshape(r1 - r0, c1 - c0)
    iters, cond, converged = res.iterations, res.cond_estimate, res.converged
    if refine:
        fgrid = Grid2D(2 * grid.n, grid.L)
        fq = spectral_upsample(q.q, 2).values
        fbox = (2 * r0, 2 * r1 - 1, 2 * c0, 2 * c1 - 1)
        _, fres = _solve_box(fq, fgrid, k, fbox, tol, restart, maxiter, samples, 1)
        fv = fres.x.reshape(fbox[1] - fbox[0], fbox[3] - fbox[2])[::2, ::2]
        v = (16.0 * fv - v) / 15.0
        iters += fres.iterations
        cond = max(cond, fres.cond_estimate)
        converged = converged and fres.converged
    status = "converged" if converged else "suspected-exceptional"
    if not np.all(np.isfinite(v)):
        status = "failed"
        v = np.nan_to_num(v)
    qb = qv[r0:r1, c0:c1]
    mu_box = 1.0 + v
    mu_full = np.ones(grid.shape, dtype=complex)
    if full:
        ext = _BoxConvolver(grid, k, box, whole, samples, stride)
        mu_full -= ext(qb * mu_box)
    # the solved values are kept on the box itself
    mu_full[r0:r1, c0:c1] = mu_box
    if refine:
        # the extrapolated field solves neither discrete system exactly, so
        # report the worse of the two Krylov residuals
        res_ls = max(float(res.residual), float(fres.residual))
    else:
        ls = mu_box - 1.0 + conv(qb * mu_box)
        res_ls = float(np.linalg.norm(ls) / np.linalg.norm(mu_box))
    cgo = CGOField(grid, k, ComplexField(grid, mu_full), res_ls, float("nan"),
                   iters, status, cond, box)
    if full:
        cgo.residual_PDE = pde_residual(q, cgo)
    return cgo


def scattering_t(q, mu: CGOField) -> complex:
    """Trapezoidal quadrature of ``exp(i(kx + conj(kx))) q mu``."""
    q = as_potential(q)
    if mu.grid != q.grid:
        raise InputError("mu and q live on different grids")
    z = q.grid.z()
    ph = np.exp(2j * (mu.k * z).real)
    return complex(np.sum(ph * q.values * mu.mu.values) * q.grid.cell_area)


def tau(q, mu: CGOField) -> complex:
    """Trapezoidal quadrature of ``q mu``."""
    q = as_potential(q)
    return complex(np.sum(q.values * mu.mu.values) * q.grid.cell_area)


def mu_tilde(mu: CGOField, k=None, tau_k=None) -> ComplexField:
    """``mu / (1 + ell(k) tau(k))``."""
    k = mu.k if k is None else complex(k)
    if tau_k is None:
        raise InputError("tau_k is required")
    d = 1.0 + ell(k) * complex(tau_k)
    if abs(d) < 1e-12:
        raise SingularRenormalizationError(f"renormalization singular: |1 + ell tau| = {abs(d):.2e}")
    return ComplexField(mu.grid, mu.mu.values / d)


# ---------------------------------------------------------------------------
# scans
# ---------------------------------------------------------------------------

def _one_k(args):
    qv, n, L, k, tol, pde = args
    grid = Grid2D(n, L)
    q = Potential.from_array(grid, qv)
    try:
        cgo = solve_mu(q, k, tol, full=pde)
    except (ArithmeticError, ValueError):
        return (0j, 0j, "failed", 0, np.inf, np.inf, np.inf)
    t = scattering_t(q, cgo) if cgo.status != "failed" else 0j
    ta = tau(q, cgo) if cgo.status != "failed" else 0j
    return (t, ta, cgo.status, cgo.iterations, cgo.residual_LS,
            cgo.residual_PDE if pde else float("nan"), cgo.cond_estimate)


def _mirror_index(ks):
    """For each sample the index of ``-k`` in ``ks`` (or -1)."""
    scale = max(float(np.abs(ks).max()), 1.0)
    keys = {}
    for i, k in enumerate(ks):
        keys[(round(k.real / scale, 10), round(k.imag / scale, 10))] = i
    out = np.full(ks.size, -1)
    for i, k in enumerate(ks):
        out[i] = keys.get((round(-k.real / scale, 10), round(-k.imag / scale, 10)), -1)
    return out


def scan_k(q, kgrid: KGrid, tol=1e-10, *, workers=1, pde=True, symmetric=True,
           progress=None) -> ScatteringData:
    """Scattering transform over every sample of ``kgrid``.

    Per-k failures are recorded, never raised.  The iteration-count rule
    flags samples that needed more than ten times the median number of
    iterations.  Output order follows ``kgrid`` and does not depend on
    ``workers``.

    For a real potential ``mu(x, -k) = conj(mu(x, k))``, hence
    ``t(-k) = conj(t(k))`` and ``tau(-k) = conj(tau(k))``; with
    ``symmetric=True`` only one sample of each such pair is solved.  With
    ``pde=True`` every solve also extends ``mu`` to the whole grid and
    records the PDE residual (roughly twice the cost).
    """
    q = as_potential(q)
    grid = q.grid
    ks = kgrid.samples
    N = ks.size
    t = np.zeros(N, complex)
    ta = np.zeros(N, complex)
    st = np.empty(N, dtype=object)
    it = np.zeros(N, int)
    rs = np.zeros(N)
    rp = np.zeros(N)
    cd = np.ones(N)
    meta = {"tol": tol, "grid": grid.to_dict()}
    if not np.any(q.values):
        st[:] = "converged"
        return ScatteringData(kgrid, t, ta, st.astype(str), it, rs, rp, cd, meta)
    mirror = _mirror_index(ks) if symmetric else np.full(N, -1)
    todo = [i for i in range(N) if mirror[i] < 0 or mirror[i] > i]
    tasks = ((q.values, grid.n, grid.L, complex(ks[i]), tol, pde) for i in todo)
    if workers and workers > 1:
        ex = ProcessPoolExecutor(max_workers=workers)
        results = ex.map(_one_k, tasks, chunksize=max(1, len(todo) // (8 * workers)))
    else:
        ex = None
        results = map(_one_k, tasks)
    try:
        for done, (i, r) in enumerate(zip(todo, results)):
            t[i], ta[i], st[i], it[i], rs[i], rp[i], cd[i] = r
            j = mirror[i]
            if j >= 0:
                t[j], ta[j] = np.conj(t[i]), np.conj(ta[i])
                st[j], it[j], rs[j], rp[j], cd[j] = st[i], it[i], rs[i], rp[i], cd[i]
            if progress:
                progress(done + 1, len(todo))
    finally:
        if ex is not None:
            ex.shutdown()
    conv = st == "converged"
    if conv.any():
        med = float(np.median(it[conv]))
        st[conv & (it > 10 * max(med, 1.0))] = "suspected-exceptional"
    meta["solves"] = len(todo)
    return ScatteringData(kgrid, t, ta, st.astype(str), it, rs, rp, cd, meta)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

CSV_COLUMNS = ("k_re", "k_im", "t_re", "t_im", "tau_re", "tau_im", "status", "iters", "residual")


def _fmt(x):
    return repr(float(x))


def scattering_csv_text(sd: ScatteringData) -> str:
    """Render ``sd`` as CSV text (floats in shortest round-trip form)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for i, k in enumerate(sd.k):
        w.writerow([_fmt(k.real), _fmt(k.imag), _fmt(sd.t[i].real), _fmt(sd.t[i].imag),
                    _fmt(sd.tau[i].real), _fmt(sd.tau[i].imag), sd.status[i],
                    int(sd.iterations[i]), _fmt(sd.residual[i])])
    return buf.getvalue()


def write_scattering_csv(sd: ScatteringData, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(scattering_csv_text(sd))


def read_scattering_csv(path, structure="custom", params=None) -> ScatteringData:
    """Parse a CSV written by :func:`write_scattering_csv`."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        raise InputError(f"{os.fspath(path)}: unexpected CSV header")
    body = rows[1:]
    if not body:
        raise InputError(f"{os.fspath(path)}: no data rows")
    try:
        k = np.array([float(r[0]) + 1j * float(r[1]) for r in body])
        t = np.array([float(r[2]) + 1j * float(r[3]) for r in body])
        ta = np.array([float(r[4]) + 1j * float(r[5]) for r in body])
        st = np.array([r[6] for r in body])
        it = np.array([int(r[7]) for r in body])
        rs = np.array([float(r[8]) for r in body])
    except (ValueError, IndexError) as exc:
        raise InputError(f"{os.fspath(path)}: malformed row ({exc})") from None
    if not set(st) <= set(STATUSES):
        raise InputError(f"unknown status values {set(st) - set(STATUSES)}")
    kg = KGrid(k, structure, params)
    # KGrid sorts its samples; apply the same permutation to the rows
    perm = np.lexsort((np.mod(np.angle(k), 2 * np.pi), np.abs(k)))
    return ScatteringData(kg, t[perm], ta[perm], st[perm], it[perm], rs[perm],
                          None, None, {"source": os.fspath(path)})
