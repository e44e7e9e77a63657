"""scikit-learn style wrappers around the scattering pipeline.

The objects follow the usual conventions (constructor arguments are the
hyper-parameters, ``fit`` returns ``self``, learned attributes end in an
underscore, ``get_params``/``set_params`` come from ``BaseEstimator``), so
they compose with ``clone``, grid searches and pipelines.  Inputs are
potentials or scattering data rather than feature matrices.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .asymptotics import fit_smallk, smallk_model
from .errors import InputError
from .forward import KGrid, ScatteringData, scan_k
from .grid import Grid2D
from .inverse import build_dbar_data, reconstruct_q
from .potentials import Potential, as_potential, classify

__all__ = ["ScatteringTransform", "SmallKLaw", "PotentialClassifier", "InverseScattering"]


def _as_list(X):
    if isinstance(X, (Potential, ScatteringData)):
        return [X]
    return list(X)


class ScatteringTransform(BaseEstimator, TransformerMixin):
    """Maps potentials to ``t(k)`` sampled on a fixed k-grid."""

    def __init__(self, structure="polar", k_min=1e-3, k_max=12.0, n_r=24, n_theta=8,
                 m=128, K=12.0, tol=1e-10, workers=1):
        self.structure = structure
        self.k_min = k_min
        self.k_max = k_max
        self.n_r = n_r
        self.n_theta = n_theta
        self.m = m
        self.K = K
        self.tol = tol
        self.workers = workers

    def fit(self, X=None, y=None):
        if self.structure == "polar":
            self.kgrid_ = KGrid.polar(self.k_min, self.k_max, self.n_r, self.n_theta)
        elif self.structure == "lattice":
            self.kgrid_ = KGrid.lattice(self.m, self.K, self.k_min, self.k_max)
        else:
            raise InputError("structure must be 'polar' or 'lattice'")
        self.k_ = self.kgrid_.samples
        return self

    def scan(self, X):
        """Full :class:`ScatteringData` for every potential in ``X``."""
        check_is_fitted(self, "kgrid_")
        return [scan_k(as_potential(q), self.kgrid_, self.tol, workers=self.workers, pde=False)
                for q in _as_list(X)]

    def transform(self, X):
        """Array of shape ``(n_potentials, n_k)`` with ``t(k)``."""
        return np.stack([sd.t for sd in self.scan(X)])


class SmallKLaw(BaseEstimator, RegressorMixin):
    """The small-k law ``t ~ 2 pi a / (c_inf - a (log|k| + gamma))`` as a regressor.

    ``fit(k, t)`` estimates ``beta = c_inf / a`` and ``a_ = c_inf / beta``;
    ``predict(k)`` evaluates the model.  ``score`` is the usual R^2 on the
    real part.
    """

    def __init__(self, k_lo=1e-4, k_hi=5e-2, c_inf=1.0, pole_margin=1.0):
        self.k_lo = k_lo
        self.k_hi = k_hi
        self.c_inf = c_inf
        self.pole_margin = pole_margin

    def fit(self, k, t):
        k = np.asarray(k, dtype=complex).ravel()
        t = np.asarray(t, dtype=complex).ravel()
        if k.shape != t.shape:
            raise InputError("k and t must have the same length")
        n = k.size
        sd = ScatteringData(KGrid(k), t[np.lexsort((np.mod(np.angle(k), 2 * np.pi), np.abs(k)))],
                            np.zeros(n, complex), np.array(["converged"] * n),
                            np.zeros(n, int), np.zeros(n))
        self.fit_ = fit_smallk(sd, (self.k_lo, self.k_hi), c_inf=self.c_inf,
                               pole_margin=self.pole_margin)
        self.a_ = self.fit_.a_fit
        self.beta_ = self.fit_.beta
        return self

    def predict(self, k):
        check_is_fitted(self, "fit_")
        return smallk_model(np.asarray(k, dtype=complex), self.a_, self.c_inf).real

    def score(self, k, t, sample_weight=None):
        return super().score(k, np.asarray(t).real, sample_weight=sample_weight)


class PotentialClassifier(BaseEstimator, ClassifierMixin):
    """Labels potentials as critical, subcritical, supercritical or unknown."""

    def __init__(self, tol_eig=1e-6, a_tol=None, gray=0.5):
        self.tol_eig = tol_eig
        self.a_tol = a_tol
        self.gray = gray

    def fit(self, X=None, y=None):
        self.classes_ = np.array(["critical", "subcritical", "supercritical", "unknown"])
        return self

    def predict(self, X):
        check_is_fitted(self, "classes_")
        return np.array([classify(q, tol_eig=self.tol_eig, a_tol=self.a_tol, gray=self.gray).label
                         for q in _as_list(X)])


class InverseScattering(BaseEstimator, TransformerMixin):
    """Maps scattering data to reconstructed potentials on an x-grid."""

    def __init__(self, m=128, K=12.0, k_min=1e-3, k_max=None, fill_policy="zero",
                 x_n=64, time=0.0, tol=1e-10, workers=1):
        self.m = m
        self.K = K
        self.k_min = k_min
        self.k_max = k_max
        self.fill_policy = fill_policy
        self.x_n = x_n
        self.time = time
        self.tol = tol
        self.workers = workers

    def fit(self, X=None, y=None):
        """Fixes the reconstruction grid, the periodic box dual to the k-lattice."""
        self.grid_x_ = Grid2D(self.x_n, np.pi * self.m / (4.0 * self.K))
        return self

    def transform(self, X):
        """List of reconstructed :class:`Potential` objects on ``grid_x_``."""
        check_is_fitted(self, "grid_x_")
        out = []
        for sd in _as_list(X):
            dd = build_dbar_data(sd, self.m, self.K, self.k_min, self.fill_policy,
                                 k_max=self.k_max)
            out.append(reconstruct_q(dd.with_time(self.time), self.grid_x_, tol=self.tol,
                                     workers=self.workers).q)
        return out
