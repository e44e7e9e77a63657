"""Restarted GMRES for matrix-free linear systems.

Works over either the real or the complex numbers, depending on the dtype of
the right-hand side.  Real-linear operators on complex data (such as the
conjugate-linear d-bar operator) are handled by callers that view complex
arrays as interleaved real vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import svdvals

__all__ = ["GMRESResult", "gmres"]


@dataclass
class GMRESResult:
    x: np.ndarray
    converged: bool
    iterations: int
    residual: float
    history: list = field(default_factory=list)
    cond_estimate: float = 1.0


def _givens(a, b):
    if b == 0:
        return 1.0, 0.0 * a
    if a == 0:
        return 0.0, np.conj(b) / abs(b)
    t = np.hypot(abs(a), abs(b))
    c = abs(a) / t
    s = (a / abs(a)) * np.conj(b) / t
    return c, s


def gmres(matvec, b, x0=None, *, tol=1e-10, restart=30, maxiter=500):
    """Solve ``A x = b`` with restarted GMRES (modified Gram-Schmidt).

    Parameters
    ----------
    matvec : callable
        Applies ``A`` to a 1-D array of the same dtype as ``b``.
    b : ndarray
        Right-hand side (1-D, real or complex).
    x0 : ndarray, optional
        Initial guess; zero by default.
    tol : float
        Target relative residual ``||b - A x|| / ||b||``.
    restart, maxiter : int
        Krylov cycle length and total number of matrix-vector products.

    Returns
    -------
    GMRESResult
        ``cond_estimate`` is the 2-norm condition number of the Hessenberg
        matrix from the last cycle, a cheap proxy for ``cond(A)``.
    """
    b = np.asarray(b)
    dtype = np.result_type(b.dtype, np.float64)
    b = b.astype(dtype, copy=False)
    bnorm = float(np.linalg.norm(b))
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=dtype, copy=True)
    if bnorm == 0.0:
        return GMRESResult(np.zeros_like(b), True, 0, 0.0, [0.0], 1.0)
    r = b - matvec(x) if x0 is not None else b.copy()
    beta = float(np.linalg.norm(r))
    history = [beta / bnorm]
    total = 0
    cond = 1.0
    if beta / bnorm <= tol:
        return GMRESResult(x, True, 0, beta / bnorm, history, cond)
    while total < maxiter:
        m = min(restart, maxiter - total)
        V = np.empty((m + 1, b.size), dtype=dtype)
        H = np.zeros((m + 1, m), dtype=dtype)
        cs = np.zeros(m, dtype=float)
        sn = np.zeros(m, dtype=dtype)
        g = np.zeros(m + 1, dtype=dtype)
        g[0] = beta
        V[0] = r / beta
        j_used = 0
        for j in range(m):
            w = matvec(V[j])
            total += 1
            for i in range(j + 1):
                H[i, j] = np.vdot(V[i], w)
                w = w - H[i, j] * V[i]
            H[j + 1, j] = np.linalg.norm(w)
            hnext = float(H[j + 1, j].real)
            for i in range(j):
                hi, hi1 = H[i, j], H[i + 1, j]
                H[i, j] = cs[i] * hi + sn[i] * hi1
                H[i + 1, j] = -np.conj(sn[i]) * hi + cs[i] * hi1
            c, s = _givens(H[j, j], H[j + 1, j])
            cs[j], sn[j] = c, s
            H[j, j] = c * H[j, j] + s * H[j + 1, j]
            H[j + 1, j] = 0.0
            g[j + 1] = -np.conj(s) * g[j]
            g[j] = c * g[j]
            j_used = j + 1
            res = abs(g[j + 1]) / bnorm
            history.append(float(res))
            if res <= tol or hnext <= 1e-300:
                break
            V[j + 1] = w / hnext
        R = np.triu(H[:j_used, :j_used])
        y = _back_substitute(R, g[:j_used])
        x = x + V[:j_used].T @ y
        sv = svdvals(R)
        cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
        r = b - matvec(x)
        beta = float(np.linalg.norm(r))
        history.append(beta / bnorm)
        if beta / bnorm <= tol:
            return GMRESResult(x, True, total, beta / bnorm, history, cond)
        if not np.isfinite(beta):
            break
    return GMRESResult(x, False, total, beta / bnorm, history, cond)


def _back_substitute(R, g):
    n = R.shape[0]
    y = np.zeros(n, dtype=np.result_type(R, g))
    for i in range(n - 1, -1, -1):
        if R[i, i] == 0:
            y[i] = 0.0
            continue
        y[i] = (g[i] - R[i, i + 1:] @ y[i + 1:]) / R[i, i]
    return y
