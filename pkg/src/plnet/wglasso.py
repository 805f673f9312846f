"""Weighted graphical lasso: maximize

    n_k log|Omega| - Tr(S Omega) - sum_{i != j} P_ij |Omega_ij|
                   - (2/tau) sum_i Omega_ii

over symmetric positive definite matrices, with an elementwise off-diagonal
penalty matrix P. Solved by block coordinate descent on the covariance with
an elementwise lasso inner loop (warm-startable); soft-thresholding yields
exact zeros. The stationarity conditions implemented here (``kkt_residual``)
count the penalty once per ordered pair, the convention penalty matrices are
fed to graphical-lasso solvers in.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _backend
from .datasets import DatasetError, NotPositiveDefiniteError, symmetrize


@dataclass
class GlassoProblem:
    """One group's M-step problem.

    ``scatter`` is the unnormalized scatter matrix (weight ``n_k``),
    ``penalties`` the symmetric off-diagonal penalty matrix and ``diag_rate``
    the coefficient 2/tau of the linear diagonal penalty (0 disables it).
    """

    scatter: np.ndarray
    n_k: float
    penalties: np.ndarray
    diag_rate: float = 0.0
    tol: float = 1e-8
    max_sweeps: int = 200

    def validate(self) -> None:
        s = self.scatter
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise ValueError("scatter must be square")
        if np.max(np.abs(s - s.T), initial=0.0) > 1e-8:
            raise ValueError("scatter must be symmetric")
        if self.penalties.shape != s.shape:
            raise ValueError("penalties must match the scatter shape")
        if np.max(np.abs(self.penalties - self.penalties.T), initial=0.0) > 1e-8:
            raise ValueError("penalties must be symmetric")
        if self.n_k <= 0:
            raise ValueError("n_k must be positive")
        if self.diag_rate < 0 or self.tol <= 0 or self.max_sweeps < 1:
            raise ValueError("invalid solver controls")

    def normalized(self) -> tuple[np.ndarray, np.ndarray]:
        """(shat, lam): scatter/n_k with the diagonal shift folded in, and
        the elementwise penalty divided by n_k."""
        shat = np.array(self.scatter, dtype=float) / self.n_k
        shat[np.diag_indices_from(shat)] += self.diag_rate / self.n_k
        lam = np.array(self.penalties, dtype=float) / self.n_k
        np.fill_diagonal(lam, 0.0)
        return shat, lam


def _reconstruct_precision(W: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Precision matrix from the working covariance and lasso coefficients.

    Exact zero coefficients map to exact zero precision entries; the final
    symmetrization keeps a pair at zero whenever either triangle is zero, so
    soft-thresholded zeros never densify.
    """
    p = W.shape[0]
    idx = np.arange(p)
    omega = np.zeros((p, p))
    for j in range(p):
        mask = idx != j
        denom = W[j, j] - W[mask, j] @ B[:, j]
        if denom <= 0 or not np.isfinite(denom):
            raise NotPositiveDefiniteError(
                "covariance update lost positive definiteness"
            )
        ojj = 1.0 / denom
        omega[j, j] = ojj
        omega[mask, j] = -B[:, j] * ojj
    zero = (omega == 0.0) | (omega.T == 0.0)
    out = symmetrize(omega)
    out[zero] = 0.0
    np.fill_diagonal(out, np.diag(omega))
    return out


def solve(problem: GlassoProblem,
          warm_start: Optional[np.ndarray] = None) -> np.ndarray:
    """Solve the penalized problem; returns a symmetric PD precision matrix.

    ``warm_start`` is a previous solution (the engine passes the precision
    matrix from the preceding outer iteration). Convergence: max-abs change
    of the working covariance over a sweep falls to
    tol * mean off-diagonal |scatter/n_k|.
    """
    problem.validate()
    shat, lam = problem.normalized()
    p = shat.shape[0]

    if np.any(np.diag(shat) <= 0):
        raise DatasetError(
            "degenerate scatter: zero diagonal entry with no diagonal penalty"
        )
    if p == 1:
        return np.array([[1.0 / shat[0, 0]]])

    W = shat.copy()
    B = np.zeros((p - 1, p))
    if warm_start is not None:
        omega0 = np.asarray(warm_start, dtype=float)
        W0 = np.linalg.inv(omega0)
        # project into the dual-feasible box |W - shat| <= lam and restore the
        # stationary diagonal; fall back to a cold start if that loses PD
        W0 = np.clip(W0, shat - lam, shat + lam)
        np.fill_diagonal(W0, np.diag(shat))
        try:
            np.linalg.cholesky(W0)
        except np.linalg.LinAlgError:
            pass
        else:
            W = W0
            idx = np.arange(p)
            for j in range(p):
                B[:, j] = -omega0[idx != j, j] / omega0[j, j]
    else:
        # stationarity fixes the working diagonal at the shifted scatter
        np.fill_diagonal(W, np.diag(shat))

    off = ~np.eye(p, dtype=bool)
    thr = problem.tol * float(np.mean(np.abs(shat[off])))
    inner_thr = thr / 10.0

    W = np.ascontiguousarray(W)
    B = np.ascontiguousarray(B)
    _backend.glasso_cd(shat, lam, thr, inner_thr, problem.max_sweeps, W, B)
    return _reconstruct_precision(W, B)


def sweep_trace(problem: GlassoProblem, n_sweeps: int) -> list[np.ndarray]:
    """Precision iterates after each of the first ``n_sweeps`` sweeps
    (diagnostic; used to check objective monotonicity)."""
    problem.validate()
    shat, lam = problem.normalized()
    p = shat.shape[0]
    off = ~np.eye(p, dtype=bool)
    inner_thr = problem.tol * float(np.mean(np.abs(shat[off]))) / 10.0
    W = np.ascontiguousarray(shat.copy())
    B = np.zeros((p - 1, p))
    out = []
    for _ in range(n_sweeps):
        _backend.glasso_cd(shat, lam, 0.0, inner_thr, 1, W, B)
        out.append(_reconstruct_precision(W, B))
    return out


def objective(omega: np.ndarray, problem: GlassoProblem) -> float:
    """Penalized objective being maximized, in the solver's convention
    (off-diagonal penalty counted once per ordered pair)."""
    sign, logdet = np.linalg.slogdet(omega)
    if sign <= 0:
        return -np.inf
    off = ~np.eye(omega.shape[0], dtype=bool)
    return float(
        problem.n_k * logdet
        - np.sum(problem.scatter * omega)
        - np.sum(problem.penalties[off] * np.abs(omega[off]))
        - problem.diag_rate * np.sum(np.diag(omega))
    )


def kkt_residual(omega: np.ndarray, problem: GlassoProblem) -> float:
    """Max-norm violation of the stationarity conditions at ``omega``.

    With W = omega^-1: off-diagonal entries must satisfy
    n_k W_ij = S_ij + P_ij sign(omega_ij) when omega_ij != 0 and
    |n_k W_ij - S_ij| <= P_ij when omega_ij == 0; the diagonal satisfies
    n_k W_ii = S_ii + 2/tau.
    """
    W = np.linalg.inv(omega)
    n_k = problem.n_k
    S = problem.scatter
    P = problem.penalties
    g = n_k * W - S
    p = omega.shape[0]
    off = ~np.eye(p, dtype=bool)
    nonzero = off & (omega != 0.0)
    zero = off & (omega == 0.0)
    res = 0.0
    if nonzero.any():
        res = max(res, float(np.max(
            np.abs(g[nonzero] - P[nonzero] * np.sign(omega[nonzero]))
        )))
    if zero.any():
        res = max(res, float(np.max(np.abs(g[zero]) - P[zero])))
    res = max(res, float(np.max(np.abs(np.diag(g) - problem.diag_rate))))
    return res
