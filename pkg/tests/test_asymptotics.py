import json

import numpy as np
import pytest

from dbarscat.asymptotics import (check_scaling, fit_json_text, fit_smallk, largek_decay_report,
                                  loglog_slope, radial_profile, scaling_report, smallk_csv_text,
                                  smallk_model)
from dbarscat.errors import DegenerateFitError, InputError
from dbarscat.forward import KGrid, ScatteringData, scan_k
from dbarscat.grid import Grid2D
from dbarscat.potentials import Potential, gaussian, solve_psi0


def _synthetic(kg, t):
    n = len(kg)
    return ScatteringData(kg, np.asarray(t, complex), np.zeros(n, complex),
                          np.array(["converged"] * n), np.zeros(n, int), np.zeros(n))


def test_fit_recovers_model_exactly():
    kg = KGrid.polar(1e-4, 5e-2, 10, 4)
    for a in (0.1, 0.4, 1.3):
        fit = fit_smallk(_synthetic(kg, smallk_model(kg.samples, a, 1.0)))
        assert fit.a_fit == pytest.approx(a, rel=1e-10)
        assert fit.c_fit == 1.0
        assert fit.rms_residual < 1e-12


def test_only_the_ratio_is_identifiable():
    kg = KGrid.polar(1e-4, 5e-2, 10, 4)
    t = smallk_model(kg.samples, 0.5, 2.0)  # beta = 4
    fit = fit_smallk(_synthetic(kg, t), c_inf=2.0)
    assert fit.beta == pytest.approx(4.0, rel=1e-10)
    assert fit.a_fit == pytest.approx(0.5, rel=1e-10)


def test_zero_data_is_degenerate():
    kg = KGrid.polar(1e-4, 5e-2, 10, 4)
    with pytest.raises(DegenerateFitError):
        fit_smallk(_synthetic(kg, np.zeros(len(kg))))
    with pytest.raises(InputError):
        fit_smallk(_synthetic(kg, np.ones(len(kg))), window=(1.0, 2.0))
    with pytest.raises(InputError):
        fit_smallk(_synthetic(kg, np.ones(len(kg))), window=(1e-2, 1e-3))


def test_pole_inside_window_is_excluded():
    kg = KGrid.polar(1e-4, 5e-2, 30, 2)
    # beta = log(1e-3) + gamma puts the pole at |k| = 1e-3
    a = 1.0 / (np.log(1e-3) + 0.5772156649015329)
    t = smallk_model(kg.samples, a, 1.0)
    fit = fit_smallk(_synthetic(kg, t))
    assert fit.pole_excluded
    assert fit.pole == pytest.approx(1e-3, rel=1e-6)


def test_loglog_slope_and_profile():
    x = np.geomspace(1, 100, 7)
    assert loglog_slope(x, 3 * x ** -1.7) == pytest.approx(-1.7)
    with pytest.raises(DegenerateFitError):
        loglog_slope([1.0], [1.0])
    kg = KGrid.polar(1, 10, 4, 6)
    radii, means, counts = radial_profile(_synthetic(kg, np.abs(kg.samples) ** 2))
    np.testing.assert_allclose(radii, kg.radii)
    np.testing.assert_allclose(means, kg.radii ** 2)
    assert list(counts) == [6] * 4


def test_decay_report_on_synthetic_s():
    kg = KGrid.polar(0.5, 16, 12, 4)
    k = kg.samples
    t = 4 * np.pi * np.conj(k) * np.abs(k) ** -2.0  # |s| = |k|^-2
    rep = largek_decay_report(_synthetic(kg, t))
    assert rep.slope == pytest.approx(-2.0, abs=1e-10)
    with pytest.raises(InputError):
        largek_decay_report(_synthetic(KGrid.polar(0.5, 4, 12, 4), np.ones(48)))


def test_smallk_law_on_a_real_potential():
    # miniature of the acceptance check: fitted a vs (1/2 pi) int q psi0
    g = Grid2D(64, 8.0)
    q = Potential.from_array(g, gaussian(g, 1.0, 0.2, 0.8))
    sd = scan_k(q, KGrid.polar(1e-4, 5e-2, 6, 4), pde=False)
    fit = fit_smallk(sd)
    a = solve_psi0(q).a
    assert fit.a_fit == pytest.approx(a, rel=0.05)


def test_scaling_identity_small_grid():
    g = Grid2D(64, 8.0)
    q = Potential.from_array(g, gaussian(g, 1.0, 0.2, 1.0))
    kg = KGrid.polar(0.05, 2.0, 4, 4)
    assert check_scaling(q, 2.0, kg) <= 1e-2
    assert check_scaling(q, 1.0, kg) == 0.0
    rep = scaling_report(q, 2.0, kg)
    assert rep.shift_error <= 0.02


def test_text_outputs_are_deterministic():
    kg = KGrid.polar(1e-4, 5e-2, 6, 4)
    sd = _synthetic(kg, smallk_model(kg.samples, 0.3, 1.0))
    fit = fit_smallk(sd)
    js = fit_json_text(fit)
    assert js == fit_json_text(fit_smallk(sd))
    assert json.loads(js)["a_fit"] == pytest.approx(0.3)
    lines = smallk_csv_text(sd, fit).strip().splitlines()
    assert lines[0] == "radius,mean_t,model,residual"
    assert len(lines) == 7
