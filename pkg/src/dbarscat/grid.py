"""Periodic square grids, field containers and spectral operators.

The plane is truncated to the box ``[-L, L)^2`` sampled at ``n`` nodes per
side.  A point ``x = (x1, x2)`` is identified with ``x1 + i x2``.  Arrays are
stored row-major with shape ``(n, n)``; the first axis runs along ``x2`` and
the second along ``x1``, so ``values[i2, i1]`` is the sample at
``(-L + i1 h, -L + i2 h)``.

FFT normalization is fixed throughout the package: forward transforms are
unscaled and inverse transforms carry the ``1/n^2`` factor (numpy's default).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import fft as sfft
from scipy.special import j0, j1

from .errors import DomainError, GridMismatchError, InputError

__all__ = [
    "Grid2D",
    "ComplexField",
    "RealField",
    "as_field",
    "spectral_dbar_x",
    "spectral_partial_x",
    "spectral_laplacian",
    "cauchy_transform",
    "convolve_G0",
    "boundary_mass_ratio",
    "check_boundary_mass",
    "BoundaryMassWarning",
    "smooth_window",
    "trig_resample",
    "trig_eval",
    "BOUNDARY_MASS_THRESHOLD",
]

#: Relative annulus mass above which a field counts as "touching the boundary".
BOUNDARY_MASS_THRESHOLD = 1e-8


class BoundaryMassWarning(UserWarning):
    """Emitted when a field carries non-negligible mass near the box edge."""


@dataclass(frozen=True)
class Grid2D:
    """Uniform periodic grid on ``[-L, L)^2`` with ``n`` nodes per side."""

    n: int
    L: float

    def __post_init__(self):
        n = self.n
        if isinstance(n, bool) or not isinstance(n, (int, np.integer)):
            raise InputError(f"grid size n must be an integer, got {n!r}")
        if n < 8 or n & (n - 1):
            raise InputError(f"grid size n must be a power of two >= 8, got {n}")
        L = float(self.L)
        if not np.isfinite(L) or L <= 0:
            raise InputError(f"half-side L must be positive and finite, got {self.L!r}")
        object.__setattr__(self, "n", int(n))
        object.__setattr__(self, "L", L)

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.n

    @property
    def shape(self) -> tuple:
        return (self.n, self.n)

    @property
    def cell_area(self) -> float:
        return self.h * self.h

    def nodes(self) -> np.ndarray:
        """1-D node coordinates ``-L + j h``."""
        return -self.L + self.h * np.arange(self.n)

    def z(self) -> np.ndarray:
        """Complex coordinates ``x1 + i x2`` of every node, shape ``(n, n)``."""
        return _z_cached(self.n, self.L).copy()

    def freqs(self):
        """Angular frequencies ``(xi1, xi2)`` broadcast to shape ``(n, n)``."""
        xi = 2.0 * np.pi * sfft.fftfreq(self.n, d=self.h)
        return xi[None, :], xi[:, None]

    def padded(self, factor: int = 2) -> "Grid2D":
        """Grid with the same spacing covering ``[-factor L, factor L)^2``."""
        return Grid2D(self.n * factor, self.L * factor)

    def embed(self, values: np.ndarray, factor: int = 2) -> np.ndarray:
        """Place box samples in the centre of the zero-padded grid."""
        N = self.n * factor
        off = (N - self.n) // 2
        out = np.zeros((N, N), dtype=np.result_type(values.dtype, np.float64))
        out[off:off + self.n, off:off + self.n] = values
        return out

    def crop(self, values: np.ndarray, factor: int = 2) -> np.ndarray:
        """Inverse of :meth:`embed`."""
        off = (self.n * factor - self.n) // 2
        return values[off:off + self.n, off:off + self.n]

    def annulus_mask(self, frac: float = 0.25) -> np.ndarray:
        """Nodes whose sup-norm distance from the centre exceeds ``(1-frac) L``."""
        x = self.nodes()
        a = np.maximum(np.abs(x)[None, :], np.abs(x)[:, None])
        return a > (1.0 - frac) * self.L

    def to_dict(self) -> dict:
        return {"n": self.n, "L": self.L}


@lru_cache(maxsize=16)
def _z_cached(n, L):
    g = Grid2D(n, L)
    x = g.nodes()
    return x[None, :] + 1j * x[:, None]


class _FieldBase:
    _dtype = np.complex128

    def __init__(self, grid: Grid2D, values, *, meta=None):
        if not isinstance(grid, Grid2D):
            raise InputError("grid must be a Grid2D")
        arr = np.asarray(values)
        if arr.ndim == 1 and arr.size == grid.n * grid.n:
            arr = arr.reshape(grid.shape)
        if arr.shape != grid.shape:
            raise GridMismatchError(
                f"values of shape {arr.shape} do not match grid {grid.shape}")
        if self._dtype is np.float64 and np.iscomplexobj(arr):
            raise InputError("RealField requires real values")
        arr = np.array(arr, dtype=self._dtype, order="C", copy=True)
        if not np.all(np.isfinite(arr)):
            raise InputError("field values must be finite")
        arr.setflags(write=False)
        self._grid = grid
        self._values = arr
        self.meta = dict(meta or {})

    @property
    def grid(self) -> Grid2D:
        return self._grid

    @property
    def values(self) -> np.ndarray:
        return self._values

    def __array__(self, dtype=None, copy=None):
        return self._values if dtype is None else self._values.astype(dtype)

    def integral(self):
        """Trapezoidal (periodic) quadrature over the box."""
        return self._values.sum() * self._grid.cell_area

    def norm2(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self._values) ** 2) * self._grid.cell_area))

    def __repr__(self):
        return f"{type(self).__name__}(n={self._grid.n}, L={self._grid.L})"


class ComplexField(_FieldBase):
    """Immutable complex samples on a :class:`Grid2D`."""

    _dtype = np.complex128
    dtype_tag = "c128"


class RealField(_FieldBase):
    """Immutable real samples on a :class:`Grid2D`."""

    _dtype = np.float64
    dtype_tag = "f64"


def as_field(grid, values, meta=None):
    """Wrap ``values`` as a RealField when real, ComplexField otherwise."""
    if np.iscomplexobj(values):
        return ComplexField(grid, values, meta=meta)
    return RealField(grid, values, meta=meta)


def _unwrap(f, grid=None):
    if isinstance(f, _FieldBase):
        if grid is not None and f.grid != grid:
            raise GridMismatchError(f"field on {f.grid} used with {grid}")
        return f.grid, f.values
    raise InputError("expected a ComplexField or RealField")


def _first_order_symbols(grid):
    xi1, xi2 = grid.freqs()
    nyq = np.zeros(grid.shape, dtype=bool)
    nyq[:, grid.n // 2] = True
    nyq[grid.n // 2, :] = True
    dbar = 0.5j * (xi1 + 1j * xi2)
    d = 0.5j * (xi1 - 1j * xi2)
    dbar = np.where(nyq, 0.0, dbar)
    d = np.where(nyq, 0.0, d)
    return dbar, d


def _apply_symbol(values, symbol):
    return sfft.ifft2(sfft.fft2(values) * symbol)


def spectral_dbar_x(f):
    """Spectral ``(d/dx1 + i d/dx2)/2`` with multiplier ``i(xi1 + i xi2)/2``.

    The Nyquist row and column are dropped so that the operator maps real
    band-limited data to exact conjugate-symmetric spectra.
    """
    grid, v = _unwrap(f)
    return ComplexField(grid, _apply_symbol(v, _first_order_symbols(grid)[0]))


def spectral_partial_x(f):
    """Spectral ``(d/dx1 - i d/dx2)/2`` with multiplier ``i(xi1 - i xi2)/2``."""
    grid, v = _unwrap(f)
    return ComplexField(grid, _apply_symbol(v, _first_order_symbols(grid)[1]))


def spectral_laplacian(f):
    """Spectral Laplacian; returns a RealField for real input."""
    grid, v = _unwrap(f)
    xi1, xi2 = grid.freqs()
    out = sfft.ifft2(sfft.fft2(v) * (-(xi1 ** 2 + xi2 ** 2)))
    if isinstance(f, RealField):
        return RealField(grid, out.real)
    return ComplexField(grid, out)


@lru_cache(maxsize=8)
def _cauchy_symbol_padded(n, L):
    """Exact transform of ``1/(pi z)`` truncated to ``|z| < 2L`` on the 2n grid."""
    pg = Grid2D(n, L).padded()
    xi1, xi2 = pg.freqs()
    zeta = xi1 + 1j * xi2
    rho = np.abs(zeta)
    R = 2.0 * L
    with np.errstate(divide="ignore", invalid="ignore"):
        sym = (2.0 / (1j * zeta)) * (1.0 - j0(R * rho))
    sym[0, 0] = 0.0
    return sym


@lru_cache(maxsize=8)
def _cauchy_kernel_direct_hat(n, L):
    """FFT of the sampled kernel ``h^2/(pi z)`` (origin cell set to zero)."""
    g = Grid2D(n, L)
    m = np.arange(2 * n)
    m = np.where(m < n, m, m - 2 * n).astype(float) * g.h
    z = m[None, :] + 1j * m[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        ker = g.h * g.h / (np.pi * z)
    ker[0, 0] = 0.0
    ker[n, :] = 0.0
    ker[:, n] = 0.0
    return sfft.fft2(ker)


@lru_cache(maxsize=8)
def _log_symbol_padded(n, L):
    """Exact transform of ``-log|z|/(2 pi)`` truncated to ``|z| < 2L``."""
    pg = Grid2D(n, L).padded()
    xi1, xi2 = pg.freqs()
    rho = np.hypot(xi1, xi2)
    R = 2.0 * L
    with np.errstate(divide="ignore", invalid="ignore"):
        sym = (1.0 - j0(rho * R)) / rho ** 2 - R * np.log(R) * j1(rho * R) / rho
    sym[0, 0] = R * R / 4.0 - 0.5 * R * R * np.log(R)
    return sym


def cauchy_transform(f, *, method="spectral", padded=False):
    """Solid Cauchy transform ``(1/pi) int f(y)/(x - y) dy``.

    With this normalization ``dbar`` of the output returns ``f``.

    Parameters
    ----------
    f : ComplexField or RealField
        Data assumed to vanish (to working precision) outside the disk
        ``|y| < L``.
    method : {"spectral", "direct"}
        ``"spectral"`` multiplies the FFT of the zero-padded data by the exact
        Fourier transform of the kernel truncated at radius ``2L``.  This is
        exact for trigonometric data supported in the disk and is the right
        choice for smooth fields.  ``"direct"`` convolves with the sampled
        kernel ``h^2/(pi z)`` (zero in the origin cell); it equals the plain
        double sum and suits discontinuous data such as truncated scattering
        data on the k-lattice.
    padded : bool
        Return the result on the doubled grid instead of cropping to the box.
        Spectral derivatives of the padded output are free of wrap-around.
    """
    grid, v = _unwrap(f)
    if method == "direct":
        if padded:
            raise InputError("padded output is only available for method='spectral'")
        big = np.zeros((2 * grid.n, 2 * grid.n), dtype=complex)
        big[:grid.n, :grid.n] = v
        sym = _cauchy_kernel_direct_hat(grid.n, grid.L)
        w = sfft.ifft2(sfft.fft2(big) * sym)[:grid.n, :grid.n]
        return ComplexField(grid, w)
    if method != "spectral":
        raise InputError(f"unknown method {method!r}")
    sym = _cauchy_symbol_padded(grid.n, grid.L)
    w = sfft.ifft2(sfft.fft2(grid.embed(v)) * sym)
    if padded:
        return ComplexField(grid.padded(), w)
    return ComplexField(grid, grid.crop(w))


def convolve_G0(f, *, padded=False):
    """Convolution with ``G0(x) = -log|x| / (2 pi)``.

    Computed on the zero-padded grid with the exact Fourier transform of the
    log kernel truncated at radius ``2L``; no singular cell needs special
    treatment because the truncated kernel is integrable in closed form.
    Returns a RealField when ``f`` is real.
    """
    grid, v = _unwrap(f)
    sym = _log_symbol_padded(grid.n, grid.L)
    w = sfft.ifft2(sfft.fft2(grid.embed(v)) * sym)
    out_grid = grid.padded() if padded else grid
    if not padded:
        w = grid.crop(w)
    if isinstance(f, RealField):
        return RealField(out_grid, w.real)
    return ComplexField(out_grid, w)


def boundary_mass_ratio(f, frac: float = 0.125) -> float:
    """Share of ``int |f|`` carried by the outer annulus of relative width ``frac``."""
    grid, v = _unwrap(f)
    a = np.abs(v)
    tot = a.sum()
    if tot == 0:
        return 0.0
    return float(a[grid.annulus_mask(frac)].sum() / tot)


def check_boundary_mass(f, threshold: float = BOUNDARY_MASS_THRESHOLD, *, name="field"):
    """Warn with :class:`BoundaryMassWarning` when the annulus ratio is too big."""
    ratio = boundary_mass_ratio(f)
    if ratio > threshold:
        warnings.warn(
            f"{name} has relative boundary mass {ratio:.3e} > {threshold:.0e}; "
            "periodization error may be visible",
            BoundaryMassWarning,
            stacklevel=2,
        )
    return ratio


def smooth_window(grid: Grid2D, inner: float, outer: float) -> np.ndarray:
    """Radial C-infinity cutoff equal to 1 for ``|x| <= inner`` and 0 past ``outer``."""
    if not 0 < inner < outer:
        raise DomainError("need 0 < inner < outer")
    r = np.abs(grid.z())
    s = np.clip((r - inner) / (outer - inner), 0.0, 1.0)

    def bump(t):
        with np.errstate(divide="ignore", over="ignore"):
            return np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)

    a, b = bump(1.0 - s), bump(s)
    return a / (a + b)


def _trig_matrix(n, L, pts):
    """Rows evaluate the periodic trigonometric interpolant at ``pts``."""
    k = sfft.fftfreq(n, d=1.0 / n)  # integer wavenumbers
    t = (np.asarray(pts, float) + L)[:, None] * (2.0 * np.pi / (2.0 * L))
    E = np.exp(1j * t * k[None, :])
    E[:, n // 2] = np.cos(t[:, 0] * (n // 2))
    return E / n


def trig_resample(f, x1_new, x2_new) -> np.ndarray:
    """Evaluate the trigonometric interpolant of ``f`` on a tensor grid.

    Returns an array of shape ``(len(x2_new), len(x1_new))``.
    """
    grid, v = _unwrap(f)
    F = sfft.fft2(v)
    E1 = _trig_matrix(grid.n, grid.L, x1_new)
    E2 = _trig_matrix(grid.n, grid.L, x2_new)
    out = E2 @ F @ E1.T
    return out.real if np.isrealobj(v) else out


def trig_eval(f, points) -> np.ndarray:
    """Evaluate the trigonometric interpolant at scattered complex points."""
    grid, v = _unwrap(f)
    pts = np.atleast_1d(np.asarray(points, complex))
    F = sfft.fft2(v)
    E1 = _trig_matrix(grid.n, grid.L, pts.real)
    E2 = _trig_matrix(grid.n, grid.L, pts.imag)
    out = np.einsum("pi,ij,pj->p", E2, F, E1)
    return out.real if np.isrealobj(v) else out


def spectral_upsample(f, factor: int = 2):
    """Trigonometric interpolant of ``f`` on the grid with ``factor * n`` nodes.

    Every original node is also a node of the returned field, with an
    unchanged value up to rounding.  The Nyquist mode is split evenly between
    the positive and negative frequency, which keeps real data real.
    """
    grid, v = _unwrap(f)
    n, N = grid.n, grid.n * factor
    F = sfft.fft2(v)
    G = np.zeros((N, N), dtype=complex)
    h = n // 2
    idx = np.r_[0:h, N - h:N]
    src = np.r_[0:h, n - h:n]
    G[np.ix_(idx, idx)] = F[np.ix_(src, src)]
    # split the Nyquist row/column symmetrically
    G[h, :] = 0.5 * G[N - h, :]
    G[N - h, :] *= 0.5
    G[:, h] = 0.5 * G[:, N - h]
    G[:, N - h] *= 0.5
    out = sfft.ifft2(G) * factor * factor
    fine = Grid2D(N, grid.L)
    return as_field(fine, out.real if np.isrealobj(v) else out)
