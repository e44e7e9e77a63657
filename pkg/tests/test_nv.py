import numpy as np
import pytest

from dbarscat.errors import BlowUpError, InputError
from dbarscat.forward import ScatteringData, KGrid, scattering_t, solve_mu
from dbarscat.grid import ComplexField, Grid2D
from dbarscat.inverse import build_dbar_data, dual_grid, reconstruct_q
from dbarscat.nv import (evolve_scattering, nv_linear_symbol, nv_pde_evolve, nv_pde_step,
                         nv_rhs)
from dbarscat.potentials import Potential, gaussian


def test_linear_symbol_on_a_plane_wave():
    g = Grid2D(32, np.pi)
    z = g.z()
    xi = 2 + 3j  # integer wavenumbers fit the 2 pi box
    f = np.exp(1j * (xi.real * z.real + xi.imag * z.imag))
    dt = 0.01
    out = nv_pde_step(ComplexField(g, f), dt, linear_only=True).values
    expected = np.exp(dt * 0.25j * (xi ** 3).real) * f
    np.testing.assert_allclose(out, expected, atol=1e-12)
    assert nv_linear_symbol(g)[16, 3] == 0  # Nyquist row dropped


def test_linear_flow_matches_the_scattering_phase():
    # for weak q the PDE's linear flow must multiply t by exp(-i tau (k^3 + conj k^3))
    g = Grid2D(64, 8.0)
    q0 = Potential.from_array(g, gaussian(g, 1e-6, 0.3, 1.0))
    tau = 0.05
    q1 = nv_pde_step(q0, tau, linear_only=True)
    for k in (1.2 + 0.3j, 2.0):
        t0 = scattering_t(q0, solve_mu(q0, k))
        t1 = scattering_t(q1, solve_mu(q1, k))
        pred = np.exp(-2j * tau * (k ** 3).real) * t0
        assert abs(t1 - pred) < 1e-4 * abs(t0)
        # the opposite sign is clearly wrong
        assert abs(t1 - np.conj(np.exp(-2j * tau * (k ** 3).real)) * t0) > 1e-2 * abs(t0)


def test_nonlinear_term_is_quadratic():
    g = Grid2D(32, 6.0)
    q = gaussian(g, 1.0, 0, 1.0).astype(complex)
    a, b = nv_rhs(q, g), nv_rhs(2 * q, g)
    np.testing.assert_allclose(b, 4 * a, atol=1e-12)


def test_evolve_guards():
    g = Grid2D(32, 6.0)
    q = Potential.from_array(g, gaussian(g, 1.0, 0, 1.0))
    assert nv_pde_evolve(q, 0.0) is q
    with pytest.raises(InputError):
        nv_pde_evolve(q, -1.0)
    with pytest.raises(BlowUpError) as err:
        nv_pde_evolve(q, 0.01, dt=0.005, growth_limit=1e-3)
    assert err.value.trace


def test_pde_step_stays_nearly_real():
    g = Grid2D(32, 6.0)
    q = Potential.from_array(g, gaussian(g, 1.0, 0.2, 1.0))
    out, dropped = nv_pde_step(q, 1e-3, return_discarded=True)
    assert dropped < 1e-10


def test_carried_and_explicit_time_agree():
    kg = KGrid.lattice(32, 6.0, 1e-3, 6.0)
    n = len(kg)
    t = np.exp(-np.abs(kg.samples) ** 2) * 1e-3
    sd = ScatteringData(kg, t, np.zeros(n, complex), np.array(["converged"] * n),
                        np.zeros(n, int), np.zeros(n))
    dd = build_dbar_data(sd, 32, 6.0)
    ev = evolve_scattering(dd, 0.05)
    gx = dual_grid(dd, 8)
    a = reconstruct_q(ev.carried(), gx)
    b = reconstruct_q(ev.explicit(), gx)
    np.testing.assert_allclose(a.a1.values, b.a1.values, atol=1e-12)
    np.testing.assert_allclose(ev.t()[dd.s != 0], (np.exp(-2j * 0.05 * (dd.k ** 3).real)
                                                   * dd.s * 4 * np.pi * np.conj(dd.k))[dd.s != 0])
    with pytest.raises(InputError):
        evolve_scattering(dd.with_time(0.1), 0.2)
