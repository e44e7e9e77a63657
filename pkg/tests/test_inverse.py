import numpy as np
import pytest

from dbarscat.errors import CoverageError, InputError
from dbarscat.forward import KGrid, ScatteringData
from dbarscat.grid import Grid2D, _cauchy_symbol_padded
from dbarscat.inverse import (DbarData, apply_Tx, build_dbar_data, dbar_residual, dual_grid,
                              expansion_coeff_a1, field_of_view, phase, reconstruct_q,
                              sample_on, solve_mu_inverse)
from dbarscat.potentials import Potential, gaussian


def _lattice_sd(m, K, tfun, k_min=1e-3):
    kg = KGrid.lattice(m, K, k_min, K)
    n = len(kg)
    return ScatteringData(kg, tfun(kg.samples), np.zeros(n, complex),
                          np.array(["converged"] * n), np.zeros(n, int), np.zeros(n))


def _random_dd(rng, m, K, cauchy):
    lat = Grid2D(m, K)
    k = lat.z()
    s = np.zeros(lat.shape, complex)
    for _ in range(2):
        c = rng.uniform(-K / 3, K / 3) + 1j * rng.uniform(-K / 3, K / 3)
        s += (rng.standard_normal() + 1j * rng.standard_normal()) * np.exp(-np.abs(k - c) ** 2)
    s[np.abs(k) > 0.9 * K] = 0.0
    return DbarData(lat, s, 1e-3, K, cauchy=cauchy)


def _cauchy_matrix(lat, cauchy):
    """Dense matrix of the k-lattice Cauchy transform, built without FFTs."""
    m, h = lat.n, lat.h
    k = lat.z().ravel()
    d = k[:, None] - k[None, :]
    if cauchy == "direct":
        with np.errstate(divide="ignore", invalid="ignore"):
            C = h * h / (np.pi * d)
        C[d == 0] = 0.0
        return C
    # spectral: kernel = inverse DFT of the truncated-kernel symbol, summed explicitly
    sym = _cauchy_symbol_padded(m, lat.L)
    N = 2 * m
    f = np.fft.fftfreq(N) * N
    o = np.rint(d.real / h).astype(int), np.rint(d.imag / h).astype(int)
    E1 = np.exp(2j * np.pi * np.outer(np.arange(-(m - 1), m), f) / N)
    ker = (E1 @ sym @ E1.T) / (N * N)  # ker[dr, dc] at offset (dc + i dr) h
    return ker[o[1] + m - 1, o[0] + m - 1]


def _dense_dbar(dd, x):
    C = _cauchy_matrix(dd.lattice, dd.cauchy)
    P = (phase(x, dd.k) * dd.s).ravel()
    A = C * P[None, :]  # w -> C (P conj w)
    b = A @ np.ones(P.size)
    n = P.size
    M = np.block([[np.eye(n) - A.real, -A.imag], [-A.imag, np.eye(n) + A.real]])
    sol = np.linalg.solve(M, np.concatenate([b.real, b.imag]))
    return 1.0 + (sol[:n] + 1j * sol[n:]).reshape(dd.lattice.shape)


@pytest.mark.parametrize("cauchy", ["spectral", "direct"])
def test_dbar_solve_matches_dense_lu(rng, cauchy):
    worst = 0.0
    for _ in range(10):
        dd = _random_dd(rng, 16, 4.0, cauchy)
        x = rng.uniform(-2, 2) + 1j * rng.uniform(-2, 2)
        ref = _dense_dbar(dd, x)
        mu = solve_mu_inverse(dd, x, tol=1e-13).mu_k.values
        worst = max(worst, np.linalg.norm(mu - ref) / np.linalg.norm(ref))
    assert worst <= 1e-8


def test_phase_convention():
    x, k = 0.3 - 1.2j, 2.0 + 0.5j
    assert phase(x, k) == pytest.approx(np.exp(-1j * (k * x + np.conj(k * x))))
    t = 0.1
    assert phase(x, k, t) == pytest.approx(phase(x, k) * np.exp(-2j * t * (k ** 3).real))


def test_Tx_is_conjugate_linear(rng):
    dd = _random_dd(rng, 16, 4.0, "spectral")
    g = rng.standard_normal(dd.lattice.shape) + 1j * rng.standard_normal(dd.lattice.shape)
    np.testing.assert_allclose(apply_Tx(dd, 0.4, 0.0, 1j * g), -1j * apply_Tx(dd, 0.4, 0.0, g),
                               atol=1e-13)


def test_dbar_residual_small(rng):
    dd = _random_dd(rng, 32, 6.0, "spectral")
    sol = solve_mu_inverse(dd, 0.7 - 0.2j)
    assert dbar_residual(dd, sol) <= 1e-3
    with pytest.raises(InputError):
        dbar_residual(DbarData(dd.lattice, dd.s, dd.k_min, dd.k_max, cauchy="direct"), sol)


def test_born_reconstruction():
    # weak Gaussian: t is its Fourier transform to first order
    eps = 1e-4
    sd = _lattice_sd(64, 6.0, lambda k: eps * np.pi * np.exp(-np.abs(k) ** 2))
    dd = build_dbar_data(sd, 64, 6.0)
    gx = dual_grid(dd, 32)
    assert gx.L == pytest.approx(np.pi * 64 / (4 * 6.0))
    rec = reconstruct_q(dd, gx)
    ref = eps * np.exp(-np.abs(gx.z()) ** 2)
    assert np.linalg.norm(rec.q.values - ref) / np.linalg.norm(ref) < 1e-3
    assert rec.imag_ratio < 1e-3
    assert rec.report()["max_dbar_residual"] <= 1e-3
    # a1 at one point agrees with the stand-alone evaluator
    i = 5
    assert expansion_coeff_a1(dd, gx.z()[i, i]) == pytest.approx(rec.a1.values[i, i], rel=1e-8)


def test_reconstruct_rejects_wrong_box():
    sd = _lattice_sd(16, 4.0, lambda k: np.exp(-np.abs(k) ** 2))
    dd = build_dbar_data(sd, 16, 4.0)
    with pytest.raises(InputError):
        reconstruct_q(dd, Grid2D(8, 5.0))


def test_zero_data_gives_zero():
    sd = _lattice_sd(16, 4.0, lambda k: 0 * k)
    dd = build_dbar_data(sd, 16, 4.0)
    rec = reconstruct_q(dd, dual_grid(dd, 8))
    assert not np.any(rec.q.values)


def test_build_dbar_data_rules():
    sd = _lattice_sd(16, 4.0, lambda k: np.ones_like(k))
    dd = build_dbar_data(sd, 16, 4.0, k_min=0.5)
    k = dd.k
    inside = (np.abs(k) >= 0.5) & (np.abs(k) <= 4.0)
    np.testing.assert_allclose(dd.s[inside], 1 / (4 * np.pi * np.conj(k[inside])))
    assert not np.any(dd.s[~inside])
    # a scan that stops short of k_max is refused
    with pytest.raises(CoverageError):
        build_dbar_data(_lattice_sd(16, 4.0, np.ones_like, k_min=2.0), 16, 4.0, k_min=0.5)
    polar = KGrid.polar(1e-3, 3.0, 8, 8)
    n = len(polar)
    sdp = ScatteringData(polar, np.ones(n, complex), np.zeros(n, complex),
                         np.array(["converged"] * n), np.zeros(n, int), np.zeros(n))
    with pytest.raises(CoverageError):
        build_dbar_data(sdp, 16, 4.0)
    # model fill puts the small-k law inside the excised disk
    dd = build_dbar_data(sd, 16, 4.0, k_min=0.8, fill_policy="model",
                         fill_params={"a": 0.2, "c_inf": 1.0})
    small = (np.abs(k) < 0.8) & (np.abs(k) > 0)
    assert np.all(dd.s[small] != 0)
    with pytest.raises(InputError):
        build_dbar_data(sd, 16, 4.0, fill_policy="model")
    with pytest.raises(InputError):
        DbarData(Grid2D(16, 4.0), np.zeros((16, 16)), 1e-3, 5.0)


def test_polar_data_are_interpolated():
    polar = KGrid.polar(1e-3, 6.0, 40, 32)
    n = len(polar)
    t = np.exp(-np.abs(polar.samples) ** 2)
    sd = ScatteringData(polar, t, np.zeros(n, complex), np.array(["converged"] * n),
                        np.zeros(n, int), np.zeros(n))
    dd = build_dbar_data(sd, 32, 4.0)
    k = dd.k
    on = (np.abs(k) > 1e-3) & (np.abs(k) <= 4.0)
    ref = np.exp(-np.abs(k[on]) ** 2) / (4 * np.pi * np.conj(k[on]))
    assert np.max(np.abs(dd.s[on] - ref)) < 5e-3


def test_sample_on_zero_outside_box():
    g = Grid2D(32, 4.0)
    q = Potential.from_array(g, gaussian(g, 1.0, 0, 1.0))
    big = Grid2D(32, 8.0)
    v = sample_on(q, big)
    z = big.z()
    outside = (np.abs(z.real) > 4) | (np.abs(z.imag) > 4)
    assert not np.any(v[outside])
    np.testing.assert_allclose(v[~outside], gaussian(big, 1.0, 0, 1.0)[~outside], atol=1e-6)


def test_field_of_view_removes_constant():
    g = Grid2D(32, 8.0)
    f = gaussian(g, 1.0, 0, 1.0) + (0.3 - 0.1j)
    out, off = field_of_view(g, f)
    assert off == pytest.approx(0.3 - 0.1j, abs=1e-6)
    inner = np.abs(g.z()) <= 4.0
    np.testing.assert_allclose(out[inner], gaussian(g, 1.0, 0, 1.0)[inner], atol=1e-6)
    assert not np.any(out[np.abs(g.z()) >= 0.7 * 8.0])
