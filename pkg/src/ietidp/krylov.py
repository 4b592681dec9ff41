"""Preconditioned conjugate gradients with a Lanczos condition estimate.

Convergence is measured on the unpreconditioned residual relative to the
right-hand side; the recurrence residual is replaced by a recomputed true
residual every 50 iterations (and once more before declaring convergence)
to guard against drift. The extreme eigenvalues of the preconditioned
operator are estimated from the tridiagonal Lanczos matrix implied by the
CG coefficients; Ritz values below 1e-10 of the largest are discarded as
artifacts of redundant multipliers.
"""

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigvalsh_tridiagonal

__all__ = ["KrylovError", "NotPositiveDefiniteError", "PcgReport", "pcg", "lanczos_extremes"]

RITZ_FILTER_REL = 1e-10
TRUE_RESIDUAL_EVERY = 50


class KrylovError(Exception):
    pass


class NotPositiveDefiniteError(KrylovError):
    pass


@dataclass
class PcgReport:
    iterations: int
    converged: bool
    residuals: list = field(default_factory=list)  # relative to ||b||, per iteration
    lambda_min_est: float = 1.0
    lambda_max_est: float = 1.0
    kappa_est: float = 1.0
    wall_time: float = 0.0


def _tridiagonal(alphas, betas):
    m = len(alphas)
    diag = np.empty(m)
    diag[0] = 1.0 / alphas[0]
    for j in range(1, m):
        diag[j] = 1.0 / alphas[j] + betas[j - 1] / alphas[j - 1]
    off = np.array([np.sqrt(betas[j]) / alphas[j] for j in range(m - 1)])
    return diag, off


def _ritz_values(alphas, betas):
    diag, off = _tridiagonal(alphas, betas)
    if len(diag) == 1:
        return diag
    return eigvalsh_tridiagonal(diag, off)


def lanczos_extremes(alphas, betas):
    """Extreme eigenvalues of the Lanczos tridiagonal built from CG coefficients.

    ``alphas`` are the m step lengths, ``betas`` the m-1 (or m; the last is
    ignored) orthogonalization coefficients of a completed CG run.
    """
    alphas = np.asarray(alphas, dtype=float)
    betas = np.asarray(betas, dtype=float)
    m = len(alphas)
    if m == 0:
        raise KrylovError("no iterations recorded")
    if len(betas) >= m:
        betas = betas[: m - 1]
    if len(betas) != m - 1:
        raise KrylovError(f"need {m - 1} betas for {m} alphas, got {len(betas)}")
    ritz = _ritz_values(alphas, betas)
    return float(ritz[0]), float(ritz[-1])


def pcg(apply_A, apply_M, b, x0=None, tol=1e-6, max_iter=1000):
    """PCG for A x = b with preconditioner application z = M r.

    ``apply_A`` and ``apply_M`` map vectors to vectors (``apply_M=None``
    means no preconditioning). Returns ``(x, PcgReport)``; hitting
    ``max_iter`` yields a non-converged report rather than an exception,
    but a non-positive curvature direction raises
    :class:`NotPositiveDefiniteError`.
    """
    t0 = time.perf_counter()
    b = np.asarray(b, dtype=float)
    n = len(b)
    if apply_M is None:
        apply_M = lambda r: r
    if n == 0:
        return b.copy(), PcgReport(0, True, [], wall_time=time.perf_counter() - t0)
    norm_b = float(np.linalg.norm(b))
    if norm_b == 0.0:
        return np.zeros(n), PcgReport(0, True, [0.0], wall_time=time.perf_counter() - t0)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - np.asarray(apply_A(x))
    residuals = [float(np.linalg.norm(r)) / norm_b]
    alphas, betas = [], []
    converged = residuals[0] <= tol
    if not converged:
        z = np.asarray(apply_M(r))
        p = z.copy()
        rz = float(r @ z)
        for j in range(max_iter):
            Ap = np.asarray(apply_A(p))
            pAp = float(p @ Ap)
            if pAp <= 0.0:
                raise NotPositiveDefiniteError(
                    f"operator not positive definite: <p, Ap> = {pAp}"
                )
            alpha = rz / pAp
            alphas.append(alpha)
            x += alpha * p
            r -= alpha * Ap
            if (j + 1) % TRUE_RESIDUAL_EVERY == 0:
                r = b - np.asarray(apply_A(x))
            res = float(np.linalg.norm(r)) / norm_b
            if res <= tol:
                r = b - np.asarray(apply_A(x))  # confirm on the true residual
                res = float(np.linalg.norm(r)) / norm_b
                if res <= tol:
                    residuals.append(res)
                    converged = True
                    break
            residuals.append(res)
            z = np.asarray(apply_M(r))
            rz_new = float(r @ z)
            if rz_new <= 0.0:
                # preconditioned residual at the roundoff floor of a
                # semidefinite system: no further progress is possible
                break
            beta = rz_new / rz
            betas.append(beta)
            p = z + beta * p
            rz = rz_new
    report = PcgReport(len(alphas), converged, residuals,
                       wall_time=time.perf_counter() - t0)
    if alphas:
        ritz = _ritz_values(alphas, betas[: len(alphas) - 1])
        lam_max = float(ritz[-1])
        kept = ritz[ritz > RITZ_FILTER_REL * lam_max]
        lam_min = float(kept[0])
        report.lambda_min_est = lam_min
        report.lambda_max_est = lam_max
        report.kappa_est = lam_max / lam_min
    return x, report
