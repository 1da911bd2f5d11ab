"""Damped least-squares (Levenberg-Marquardt) fitting engine.

All profile/scan/trace models in this package are small and smooth, and
every fit supplies an analytic Jacobian, which keeps results deterministic
across platforms.  Steps are only ever accepted when they reduce the
residual norm, so a returned fit is never worse than its initialization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

MAX_ITER = 200
STEP_TOL = 1e-8


class FitFailedError(RuntimeError):
    """Fit did not converge; carries the best parameters and residual seen."""

    def __init__(self, message: str, params: np.ndarray, residual_norm: float):
        super().__init__(message)
        self.params = params
        self.residual_norm = residual_norm


@dataclass
class FitResult:
    params: np.ndarray
    covariance: np.ndarray       # scaled by residual variance
    residual_norm: float         # 2-norm of the residual vector at params
    n_iter: int
    converged: bool

    @property
    def param_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))


def levenberg_marquardt(
    residual: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], np.ndarray],
    p0,
    max_iter: int = MAX_ITER,
    step_tol: float = STEP_TOL,
    raise_on_failure: bool = True,
) -> FitResult:
    """Minimize ||residual(p)||^2 starting from p0.

    residual returns the length-n residual vector, jacobian its n x m
    derivative matrix.  Converges when the relative parameter step drops
    below step_tol; raises FitFailedError (or returns with converged=False
    when raise_on_failure is false) after max_iter iterations.
    """
    p = np.asarray(p0, dtype=float).copy()
    r = np.asarray(residual(p), dtype=float)
    cost = float(r @ r)
    lam = 1e-3
    n_iter = 0
    converged = False

    while n_iter < max_iter:
        n_iter += 1
        jac = np.asarray(jacobian(p), dtype=float)
        jtj = jac.T @ jac
        jtr = jac.T @ r
        diag = np.diag(jtj).copy()
        diag[diag <= 0.0] = 1.0

        accepted = False
        while lam < 1e12:
            try:
                step = np.linalg.solve(jtj + lam * np.diag(diag), -jtr)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            p_try = p + step
            r_try = np.asarray(residual(p_try), dtype=float)
            cost_try = float(r_try @ r_try)
            if np.isfinite(cost_try) and cost_try <= cost:
                small_step = np.all(np.abs(step) <= step_tol * (np.abs(p) + step_tol))
                p, r, cost = p_try, r_try, cost_try
                lam = max(lam / 10.0, 1e-12)
                accepted = True
                if small_step or cost == 0.0:
                    converged = True
                break
            lam *= 10.0
        if not accepted:
            # no direction improves the cost: already at a minimum numerically
            converged = True
        if converged:
            break

    residual_norm = float(np.sqrt(cost))
    if not converged and raise_on_failure:
        raise FitFailedError(
            f"no convergence after {n_iter} iterations (residual norm {residual_norm:.6g})",
            params=p,
            residual_norm=residual_norm,
        )

    jac = np.asarray(jacobian(p), dtype=float)
    jtj = jac.T @ jac
    n, m = jac.shape
    dof = n - m
    s2 = cost / dof if dof > 0 else np.nan
    try:
        cov = np.linalg.inv(jtj) * s2
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(jtj) * s2
    return FitResult(params=p, covariance=cov, residual_norm=residual_norm,
                     n_iter=n_iter, converged=converged)
