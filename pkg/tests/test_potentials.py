import warnings

import numpy as np
import pytest

from dbarscat.errors import DomainError, InputError
from dbarscat.grid import BoundaryMassWarning, Grid2D, RealField
from dbarscat.potentials import (Potential, add_bump, classify, conductivity_potential, gaussian,
                                 lowest_eigenvalue, rescale, solve_psi0)

G = Grid2D(64, 8.0)


def test_gaussian_helper():
    v = gaussian(G, 2.0, 1 + 1j, 0.5)
    i = np.unravel_index(np.argmax(v), v.shape)
    assert G.z()[i] == 1 + 1j and v[i] == 2.0


def test_conductivity_potential_is_critical():
    u = 1 + gaussian(G, 0.5, 0, 1.0)
    q = conductivity_potential(RealField(G, u * u))
    assert q.label == "critical"
    # psi0 = u / u(inf) is bounded, so a vanishes
    prof = solve_psi0(q)
    assert abs(prof.a) < 1e-8
    np.testing.assert_allclose(prof.psi0.values, u, atol=1e-6)
    c = classify(q)
    assert c.label == "critical" and c.min_eigenvalue > -1e-6


def test_conductivity_needs_positive_gamma():
    with pytest.raises(DomainError):
        conductivity_potential(RealField(G, np.full(G.shape, -1.0)))
    with pytest.raises(InputError):
        conductivity_potential(np.ones(G.shape))
    with pytest.warns(BoundaryMassWarning):
        conductivity_potential(RealField(G, 1 + gaussian(G, 0.5, 0, 6.0)))


def test_weak_potential_a_is_born():
    eps = 1e-4
    q = Potential.from_array(G, gaussian(G, eps, 0, 1.0))
    a = solve_psi0(q).a
    assert a == pytest.approx(eps * np.pi / (2 * np.pi), rel=1e-3)


def test_subcritical_and_supercritical_labels():
    q = Potential.from_array(G, gaussian(G, 1.0, 0, 1.0))
    c = classify(q)
    assert c.label == "subcritical" and c.a > 0
    crit = conductivity_potential(RealField(G, (1 + gaussian(G, 0.5)) ** 2))
    assert add_bump(crit, gaussian(G, 0.5, 1.0)).label == "subcritical"
    well = Potential.from_array(G, gaussian(G, -5.0, 0, 1.0))
    c = classify(well)
    assert c.label == "supercritical" and c.min_eigenvalue < 0


def test_lowest_eigenvalue_of_constant_potential():
    # -Laplacian + c on the torus has lowest eigenvalue c (constant mode)
    q = Potential.from_array(Grid2D(32, 4.0), np.full((32, 32), 0.7))
    assert lowest_eigenvalue(q) == pytest.approx(0.7, abs=1e-8)


def test_add_bump_rejects_bad_bumps():
    q = Potential.from_array(G, gaussian(G))
    with pytest.raises(DomainError):
        add_bump(q, -gaussian(G))
    with pytest.raises(DomainError):
        add_bump(q, np.zeros(G.shape))
    with pytest.raises(InputError):
        add_bump(q, np.ones((4, 4)))


def test_rescale_by_two_copies_nodes():
    q = Potential.from_array(G, gaussian(G, 1.0, 0.5, 1.0), "subcritical")
    q2 = rescale(q, 2.0)
    ref = 4.0 * gaussian(G, 1.0, 0.25, 0.5)
    np.testing.assert_allclose(q2.values, ref, atol=1e-12)
    assert q2.provenance["scale"] == 2.0 and q2.label == "subcritical"
    # integral of q_r equals integral of q
    assert q2.values.sum() == pytest.approx(q.values.sum(), rel=1e-6)
    with pytest.raises(DomainError):
        rescale(q, 0.0)


def test_rescale_fractional_interpolates():
    q = Potential.from_array(G, gaussian(G, 1.0, 0, 1.0))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        half = rescale(q, 0.8)
    np.testing.assert_allclose(half.values, 0.64 * gaussian(G, 1.0, 0, 1.25), atol=1e-6)


def test_psi0_constants_under_scaling():
    # c_inf^r = c_inf + a log r  <=>  a / a_r - 1 = a log r with unit normalization
    q = Potential.from_array(G, gaussian(G, 1.0, 0, 0.8))
    a = solve_psi0(q).a
    a2 = solve_psi0(rescale(q, 2.0)).a
    assert a / a2 - 1 == pytest.approx(a * np.log(2.0), rel=2e-3)


def test_potential_validation():
    with pytest.raises(InputError):
        Potential.from_array(G, np.zeros(G.shape), label="mystery")
