"""Small-k law, scaling law and large-k decay of the scattering transform.

Near ``k = 0`` a subcritical potential has

    t(k) ~ 2 pi a / (c_inf - a (log|k| + gamma)),

where ``a`` and ``c_inf`` are the constants of the zero-energy profile
``psi0 ~ c_inf - a log|x|``.  Only the ratio ``beta = c_inf / a`` enters the
model (numerator and denominator scale together), so :func:`fit_smallk`
estimates ``beta`` and returns ``a_fit = c_inf / beta`` for a given ``c_inf``
(1 by default, the normalization used by :func:`~dbarscat.potentials.solve_psi0`).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .errors import DegenerateFitError, InputError
from .forward import KGrid, ScatteringData, scan_k
from .greens import EULER_GAMMA
from .potentials import as_potential, rescale, solve_psi0

__all__ = [
    "SmallKFit",
    "DecayReport",
    "ScalingReport",
    "smallk_model",
    "radial_profile",
    "fit_smallk",
    "loglog_slope",
    "check_scaling",
    "scaling_report",
    "largek_decay_report",
    "smallk_csv_text",
    "fit_json_text",
]

DEFAULT_WINDOW = (1e-4, 5e-2)


def smallk_model(k, a, c_inf):
    """Leading small-k term ``2 pi a / (c_inf - a (log|k| + gamma))``."""
    lk = np.log(np.abs(np.asarray(k, dtype=complex))) + EULER_GAMMA
    return 2 * np.pi * a / (c_inf - a * lk)


@dataclass(frozen=True)
class SmallKFit:
    a_fit: float
    c_fit: float
    window: tuple
    rms_residual: float
    beta: float = float("nan")
    n_samples: int = 0
    n_radii: int = 0
    pole: float = float("nan")
    pole_excluded: bool = False

    def __post_init__(self):
        lo, hi = self.window
        if not lo < hi:
            raise InputError("fit window must satisfy k_lo < k_hi")

    def model(self, k):
        return smallk_model(k, self.a_fit, self.c_fit)

    def to_dict(self):
        d = asdict(self)
        d["window"] = list(self.window)
        return d


def radial_profile(sd: ScatteringData, values=None, *, rtol=1e-9):
    """Angular averages of ``values`` (default ``t``) grouped by ``|k|``.

    Samples whose radii agree to ``rtol`` (relative) form one group.  Returns
    ``(radii, means, counts)`` sorted by radius.
    """
    v = sd.t if values is None else np.asarray(values)
    r = np.abs(sd.k)
    order = np.argsort(r, kind="stable")
    r, v = r[order], v[order]
    breaks = np.where(np.diff(r) > rtol * np.maximum(r[1:], 1e-300))[0] + 1
    groups = np.split(np.arange(r.size), breaks)
    radii = np.array([r[g].mean() for g in groups])
    means = np.array([v[g].mean() for g in groups])
    counts = np.array([g.size for g in groups])
    return radii, means, counts


def _fit_beta(lr, tr, beta0):
    def resid(b):
        return tr - 2 * np.pi / (b[0] - lr)

    sol = least_squares(resid, [beta0], method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
    return float(sol.x[0]), resid(sol.x)


def fit_smallk(sd: ScatteringData, window=DEFAULT_WINDOW, *, c_inf=1.0,
               pole_margin=1.0, min_samples=8, min_radii=3) -> SmallKFit:
    """Least-squares fit of the small-k law to angular averages of ``Re t``.

    Radii within ``pole_margin`` (in ``log|k|``) of the model pole
    ``|k| = exp(beta - gamma)`` are dropped and the fit repeated; the result
    records whether that happened.

    Raises
    ------
    DegenerateFitError
        when the data are (numerically) zero, too few samples fall in the
        window, or the fit does not determine ``beta``.
    """
    lo, hi = map(float, window)
    if not 0 < lo < hi:
        raise InputError("fit window must satisfy 0 < k_lo < k_hi")
    rk = np.abs(sd.k)
    inwin = (rk >= lo) & (rk <= hi)
    if not inwin.any() or rk[inwin].min() > hi or rk.min() > hi or rk.max() < lo:
        raise InputError(f"window [{lo}, {hi}] outside the data radii")
    n_samp = int(inwin.sum())
    if n_samp < min_samples:
        raise DegenerateFitError(f"only {n_samp} samples in the fit window (need {min_samples})")
    sub = ScatteringData(KGrid(sd.k[inwin]), sd.t[inwin], sd.tau[inwin], sd.status[inwin],
                         sd.iterations[inwin], sd.residual[inwin])
    radii, means, _ = radial_profile(sub, sub.t.real)
    if radii.size < min_radii:
        raise DegenerateFitError(f"only {radii.size} radii in the fit window")
    scale = np.abs(means).max()
    if scale < 1e-12:
        raise DegenerateFitError("t vanishes in the fit window (critical data?)")
    lr = np.log(radii) + EULER_GAMMA
    # linearized start: 2 pi / t = beta - (log|k| + gamma)
    with np.errstate(divide="ignore", invalid="ignore"):
        b_lin = 2 * np.pi / means + lr
    b_lin = b_lin[np.isfinite(b_lin)]
    if b_lin.size == 0:
        raise DegenerateFitError("no usable samples for the linearized start")
    beta0 = float(np.median(b_lin))
    keep = np.ones(radii.size, bool)
    excluded = False
    beta, res = beta0, None
    for _ in range(5):
        beta, res = _fit_beta(lr[keep], means[keep], beta)
        near = np.abs(lr - beta) < pole_margin
        new_keep = ~near
        if new_keep.sum() < min_radii:
            raise DegenerateFitError("the model pole covers the fit window")
        if np.array_equal(new_keep, keep):
            break
        excluded = excluded or bool(near.any())
        keep = new_keep
    J = 2 * np.pi / (beta - lr[keep]) ** 2
    if not np.isfinite(beta) or np.linalg.norm(J) < 1e-14 * max(scale, 1e-300):
        raise DegenerateFitError("singular normal equations")
    a_fit = c_inf / beta if beta != 0 else float("inf")
    rms = float(np.sqrt(np.mean(res ** 2)))
    pole = float(np.exp(beta - EULER_GAMMA))
    return SmallKFit(float(a_fit), float(c_inf), (lo, hi), rms, beta, n_samp,
                     int(keep.sum()), pole, excluded)


def loglog_slope(x, y):
    """Least-squares slope of ``log|y|`` against ``log x``."""
    x = np.asarray(x, float)
    y = np.abs(np.asarray(y))
    ok = (x > 0) & (y > 0)
    if ok.sum() < 2:
        raise DegenerateFitError("need at least two positive samples for a slope")
    A = np.stack([np.log(x[ok]), np.ones(ok.sum())], axis=1)
    coef, *_ = np.linalg.lstsq(A, np.log(y[ok]), rcond=None)
    return float(coef[0])


def check_scaling(q, r, kgrid: KGrid, *, tol=1e-10, workers=1) -> float:
    """Max relative mismatch between ``t_r(k)`` and ``t(k / r)``.

    ``t_r`` is the transform of ``q_r(x) = r^2 q(r x)``.  Returns 0 when both
    transforms vanish.
    """
    q = as_potential(q)
    r = float(r)
    if r == 1.0:
        return 0.0
    if not np.any(q.values):
        return 0.0
    qr = rescale(q, r)
    tr = scan_k(qr, kgrid, tol, workers=workers, pde=False).t
    t = scan_k(q, KGrid(kgrid.samples / r), tol, workers=workers, pde=False).t
    scale = np.abs(t).max()
    if scale == 0:
        return 0.0
    return float(np.max(np.abs(tr - t)) / scale)


@dataclass(frozen=True)
class ScalingReport:
    r: float
    mismatch: float
    a: float
    a_r: float
    shift_predicted: float
    shift_measured: float

    @property
    def shift_error(self):
        d = abs(self.shift_predicted)
        return abs(self.shift_measured - self.shift_predicted) / d if d > 0 else 0.0


def scaling_report(q, r, kgrid: KGrid, *, tol=1e-10, workers=1) -> ScalingReport:
    """Transform mismatch together with the ``c_inf`` shift under ``q -> q_r``.

    With both profiles normalized to ``c_inf = 1`` the rescaled profile of
    ``q`` has ``c_inf = 1 + a log r`` relative to the profile of ``q_r``, so
    the measured shift is ``a / a_r - 1`` and the prediction ``a log r``.
    """
    q = as_potential(q)
    mismatch = check_scaling(q, r, kgrid, tol=tol, workers=workers)
    a = solve_psi0(q).a
    a_r = solve_psi0(rescale(q, r)).a
    pred = a * np.log(r)
    meas = a / a_r - 1.0 if a_r != 0 else float("nan")
    return ScalingReport(float(r), mismatch, a, a_r, float(pred), float(meas))


@dataclass(frozen=True)
class DecayReport:
    slope: float
    radii: np.ndarray = field(repr=False)
    mean_abs_s: np.ndarray = field(repr=False)
    fit_range: tuple = (float("nan"), float("nan"))
    all_zero: bool = False

    def to_dict(self):
        return {"slope": self.slope, "fit_range": list(self.fit_range),
                "all_zero": self.all_zero,
                "radii": self.radii.tolist(), "mean_abs_s": self.mean_abs_s.tolist()}


def largek_decay_report(sd: ScatteringData, n: int = 0, *, k_lo=None, min_kmax=8.0,
                        min_radii=4) -> DecayReport:
    """Slope of ``log mean|s|`` against ``log|k|`` over the outer radii.

    ``n`` is a moment weight: the profile is ``|k|^n mean|s|``.  By default the
    fit uses the outer half of the radii; ``k_lo`` overrides the lower end.
    """
    s = np.abs(sd.s())
    radii, means, _ = radial_profile(sd, s)
    means = means * radii ** n
    if not np.any(s):
        return DecayReport(float("nan"), radii, means, all_zero=True)
    if radii.max() < min_kmax:
        raise InputError(f"data reach |k| = {radii.max():.3g} < {min_kmax}")
    if k_lo is None:
        sel = np.arange(radii.size) >= radii.size // 2
    else:
        sel = radii >= k_lo
    if sel.sum() < min_radii:
        raise DegenerateFitError(f"only {int(sel.sum())} radii in the decay fit")
    slope = loglog_slope(radii[sel], means[sel])
    return DecayReport(slope, radii, means, (float(radii[sel][0]), float(radii[sel][-1])))


def smallk_csv_text(sd: ScatteringData, fit: SmallKFit) -> str:
    """CSV with columns radius, mean_t, model, residual (one row per radius)."""
    radii, means, _ = radial_profile(sd, sd.t.real)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["radius", "mean_t", "model", "residual"])
    model = fit.model(radii).real
    for r, m, f in zip(radii, means, model):
        w.writerow([repr(float(r)), repr(float(m)), repr(float(f)), repr(float(m - f))])
    return buf.getvalue()


def fit_json_text(fit: SmallKFit) -> str:
    return json.dumps(fit.to_dict(), sort_keys=True, indent=2) + "\n"
