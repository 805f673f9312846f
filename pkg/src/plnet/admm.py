"""Per-observation variational updates: consensus ADMM for the mean vector
and the univariate root solve for each variational variance.

The mean problem splits the latent-Gaussian quadratic from the Poisson
likelihood terms through a consensus constraint; each scalar subproblem is a
strictly increasing stationarity equation solved by bracketed Newton.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import _backend
from .datasets import AdmmConfig  # noqa: F401  (part of this module's surface)
from .datasets import SolverError

_EXP_CAP = 700.0


def _exp_safe(x: float) -> float:
    return math.exp(min(x, _EXP_CAP))


@dataclass
class AdmmState:
    """Terminal state of one consensus ADMM run."""

    mu_m: np.ndarray
    mu_n: np.ndarray
    alpha: np.ndarray
    residual: float
    iterations: int
    converged: bool


def mu_m_step(y_j: float, sigma2_j: float, alpha_j: float, mu_n_j: float,
              rho: float, tol: float = 1e-12, max_iter: int = 100) -> float:
    """Scalar likelihood-side update: root of exp(m + s/2) + rho*m + q = 0
    with q = alpha - rho*mu_n - y.

    Safeguarded Newton on a sign-changing bracket; the derivative is strictly
    positive so the root is unique.
    """
    c = 0.5 * sigma2_j
    q = alpha_j - rho * mu_n_j - y_j

    def g(x):
        return _exp_safe(x + c) + rho * x + q

    x = mu_n_j
    gx = g(x)
    if gx == 0.0:
        return x
    if gx > 0.0:
        hi, lo, step = x, x - 1.0, 1.0
        while g(lo) > 0.0:
            step *= 2.0
            lo -= step
            if step > 1e60:
                raise SolverError("mu_m bracket expansion failed")
    else:
        lo, hi, step = x, x + 1.0, 1.0
        while g(hi) < 0.0:
            step *= 2.0
            hi += step
            if step > 1e60:
                raise SolverError("mu_m bracket expansion failed")

    x = min(max(x, lo), hi)
    for _ in range(max_iter):
        gx = g(x)
        if abs(gx) < tol:
            return x
        if gx > 0.0:
            hi = x
        else:
            lo = x
        if hi - lo <= 1e-15 * max(1.0, abs(x)):
            return x
        dg = _exp_safe(x + c) + rho
        xn = x - gx / dg
        if xn <= lo or xn >= hi:
            xn = 0.5 * (lo + hi)
        x = xn
    raise SolverError("mu_m Newton did not converge")


def mu_n_step(mu_m: np.ndarray, alpha: np.ndarray, omega: np.ndarray,
              lam: np.ndarray, rho: float) -> np.ndarray:
    """Gaussian-side update: solve (omega + rho I) x = rho mu_M + alpha +
    omega lam by Cholesky."""
    p = omega.shape[0]
    factor = cho_factor(omega + rho * np.eye(p), lower=True)
    return cho_solve(factor, rho * mu_m + alpha + omega @ lam)


def dual_step(alpha: np.ndarray, mu_m: np.ndarray, mu_n: np.ndarray,
              rho: float) -> np.ndarray:
    return alpha + rho * (mu_m - mu_n)


def solve_mu(y_i: np.ndarray, lambda_i: np.ndarray, sigma2_i: np.ndarray,
             omega: np.ndarray, config: AdmmConfig | None = None,
             mu0: np.ndarray | None = None) -> AdmmState:
    """Full consensus ADMM for one observation's variational mean.

    Runs mu_m_step per coordinate, the consensus solve (with a cached
    Cholesky factor) and dual_step until the primal residual
    ||mu_M - mu_N||_inf drops to ``config.tol`` or ``config.max_iter`` is
    reached. ``mu0`` seeds the consensus iterate (the engine passes the
    previous outer iteration's mean; standalone calls default to
    log(y + 0.5)). Non-convergence is reported through ``converged``, not
    raised. The engine's batched kernel follows the same iteration.
    """
    config = config or AdmmConfig()
    y = np.asarray(y_i, dtype=float).ravel()
    lam = np.asarray(lambda_i, dtype=float).ravel()
    sig2 = np.asarray(sigma2_i, dtype=float).ravel()
    omega = np.asarray(omega, dtype=float)
    p = y.shape[0]
    mu_n = np.log(y + 0.5) if mu0 is None else \
        np.array(mu0, dtype=float).ravel().copy()
    mu_m = mu_n.copy()
    alpha = np.zeros(p)

    rho = config.rho
    factor = cho_factor(omega + rho * np.eye(p), lower=True)
    omlam = omega @ lam

    residual = math.inf
    it = 0
    while it < config.max_iter and residual > config.tol:
        for j in range(p):
            mu_m[j] = mu_m_step(y[j], sig2[j], alpha[j], mu_n[j], rho,
                                config.newton_tol, config.newton_max_iter)
        mu_n = cho_solve(factor, rho * mu_m + alpha + omlam)
        alpha = dual_step(alpha, mu_m, mu_n, rho)
        residual = float(np.max(np.abs(mu_m - mu_n)))
        it += 1

    return AdmmState(mu_m=mu_m, mu_n=mu_n, alpha=alpha,
                     residual=residual, iterations=it,
                     converged=residual <= config.tol)


def solve_sigma2(mu_j: float, omega_jj: float) -> float:
    """Unique root of s*omega_jj + s*exp(mu + s/2) = 1 in (0, 1/omega_jj].

    Bisection down to a 1e-12 bracket, then a short Newton polish.
    """
    if omega_jj <= 0:
        raise ValueError("omega_jj must be positive")
    out = np.empty((1, 1))
    _backend.sigma2_batch(np.array([[float(mu_j)]]),
                          np.array([float(omega_jj)]), out)
    return float(out[0, 0])


def kl_objective(mu: np.ndarray, sigma2: np.ndarray, y: np.ndarray,
                 lam: np.ndarray, omega: np.ndarray) -> float:
    """Per-observation KL-divergence objective (up to constants in the data).

    0.5 (mu-lam)' omega (mu-lam) - y'mu
    + 0.5 sum_j [ sigma2_j omega_jj + 2 exp(mu_j + sigma2_j/2) - log sigma2_j ]
    """
    diff = mu - lam
    quad = 0.5 * diff @ omega @ diff
    return float(
        quad - y @ mu
        + 0.5 * np.sum(sigma2 * np.diag(omega)
                       + 2.0 * np.exp(mu + 0.5 * sigma2)
                       - np.log(sigma2))
    )
