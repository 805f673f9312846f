"""Outer variational EM loop.

Each iteration: (1) posterior inclusion probabilities and the penalty matrix
from the current stack of precision matrices (a cross-group reduction done in
fixed group order); (2) per observation, the ADMM mean update followed by the
variance root solves; (3) the regression coefficient update; (4) scatter
matrices with the refreshed means; (5) one weighted graphical lasso per
group. Stops when the max-abs change across all precision matrices falls to
the outer tolerance.

Groups are independent within an iteration, so steps (2)-(5) are farmed out
to a pool of worker processes (one task per group per iteration). Results
are bit-identical for any worker count: per-group work never depends on
scheduling, results are collected in submission order, and the only
cross-group reduction is ordered.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit, gammaln

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover - threadpoolctl ships as a dependency
    from contextlib import nullcontext

    def threadpool_limits(limits=None):
        return nullcontext()

from . import _backend, wglasso
from .datasets import (
    CountDataset,
    FitConfig,
    FitReport,
    GroupData,
    Hyperparameters,
    ModelState,
    RankDeficiencyError,
    SolverError,
    VariationalState,
    check_positive_definite,
    initialize,
    symmetrize,
)
from .metrics import edge_set

EDGE_THRESHOLD = 1e-8


def posterior_inclusion(abs_sum: float, n_groups: int, hyper) -> float:
    """Posterior probability that a pair is included, given the summed
    absolute precision entries across groups.

    1 / (1 + (1-p0)/p0 * (v1/v0)^K * exp(-(1/v0 - 1/v1) * abs_sum)),
    evaluated in log space for stability.
    """
    logit = (
        math.log((1.0 - hyper.p0) / hyper.p0)
        + n_groups * math.log(hyper.v1 / hyper.v0)
        - (1.0 / hyper.v0 - 1.0 / hyper.v1) * abs_sum
    )
    return float(expit(-logit))


def penalty_matrix(probs: np.ndarray, hyper) -> np.ndarray:
    """Elementwise penalty p/v1 + (1-p)/v0; a convex combination of the
    spike and slab rates."""
    return probs / hyper.v1 + (1.0 - probs) / hyper.v0


@dataclass
class InclusionState:
    """Posterior inclusion probabilities and the penalty matrix they imply
    (both symmetric; diagonals unused)."""

    probs: np.ndarray
    penalties: np.ndarray


def inclusion_state(omegas: Sequence[np.ndarray], hyper) -> InclusionState:
    """Inclusion probabilities and penalties for the whole matrix at once.

    The |Omega| reduction runs in ascending group order so results do not
    depend on scheduling.
    """
    abs_sum = np.zeros_like(omegas[0])
    for om in omegas:  # fixed order: k = 1..K
        abs_sum += np.abs(om)
    logit = (
        math.log((1.0 - hyper.p0) / hyper.p0)
        + len(omegas) * math.log(hyper.v1 / hyper.v0)
        - (1.0 / hyper.v0 - 1.0 / hyper.v1) * abs_sum
    )
    probs = expit(-logit)
    return InclusionState(probs=probs, penalties=penalty_matrix(probs, hyper))


def update_beta(mu: np.ndarray, offsets: np.ndarray,
                z: np.ndarray) -> np.ndarray:
    """Least-squares coefficient update (mu - o)^T z (z^T z)^{-1}."""
    d = z.shape[1]
    gram = z.T @ z
    rhs = z.T @ (mu - offsets)  # d x p
    try:
        sol = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError as e:
        raise RankDeficiencyError(
            f"covariate Gram matrix is singular (d={d})"
        ) from e
    return sol.T


@dataclass
class ScatterMatrix:
    """Weighted variational scatter sum_i (mu_i-lam_i)(mu_i-lam_i)^T +
    diag(sigma2_i)."""

    value: np.ndarray
    n_k: int


def scatter_matrix(mu: np.ndarray, sigma2: np.ndarray,
                   lam: np.ndarray) -> ScatterMatrix:
    diff = mu - lam
    s = diff.T @ diff + np.diag(sigma2.sum(axis=0))
    return ScatterMatrix(value=symmetrize(s), n_k=mu.shape[0])


def variational_loglik(group: GroupData, omega: np.ndarray,
                       beta: np.ndarray, mu: np.ndarray,
                       sigma2: np.ndarray) -> float:
    """Variational surrogate of the complete-data log-likelihood for one
    group (Poisson term plus latent Gaussian term, entropy excluded)."""
    y = group.counts
    lam = group.offsets + group.covariates @ beta.T
    n, p = y.shape
    check_positive_definite(omega, "variational_loglik")
    chol = np.linalg.cholesky(omega)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    diff = mu - lam
    quad = float(np.sum((diff @ omega) * diff))
    tr = float(np.sum(sigma2 * np.diag(omega)))
    pois = float(np.sum(y * mu - np.exp(mu + 0.5 * sigma2) - gammaln(y + 1.0)))
    return pois + 0.5 * n * logdet - 0.5 * (quad + tr) \
        - 0.5 * n * p * math.log(2.0 * math.pi)


def variational_ebic(loglik: float, edge_count: int, p: int, d: int,
                     n_k: int, gamma: float) -> float:
    """EBIC with the variational log-likelihood plugged in:
    -2 loglik + (|E| + p d) log n_k + gamma log C(p(p+1)/2, |E|)."""
    slots = p * (p + 1) // 2
    log_binom = (gammaln(slots + 1.0) - gammaln(edge_count + 1.0)
                 - gammaln(slots - edge_count + 1.0))
    return float(-2.0 * loglik + (edge_count + p * d) * math.log(n_k)
                 + gamma * log_binom)


def default_grid(n_groups: int, p: int, total_n: int, ratio: float = 10.0,
                 p0: float = 0.5, tau: float = math.inf,
                 multipliers: Sequence[float] = (0.1, 0.25, 0.5, 1.0, 5.0),
                 ) -> list[Hyperparameters]:
    """Spike-scale grid v0 = m * sqrt(K log p / sum n_k) with v1 = ratio*v0."""
    base = math.sqrt(n_groups * math.log(p) / total_n)
    return [Hyperparameters(p0=p0, v0=m * base, v1=ratio * m * base, tau=tau)
            for m in multipliers]


def _estep_group(y, lam, sig2_prev, omega, mu_warm, admm_cfg):
    """ADMM mean update then variance solves for one group. Returns
    (mu, sigma2, n_nonconverged)."""
    mu = np.ascontiguousarray(mu_warm, dtype=float).copy()
    iters = np.zeros(y.shape[0], dtype=np.int32)
    resid = np.zeros(y.shape[0], dtype=float)
    bad = _backend.admm_batch(
        np.ascontiguousarray(y, dtype=float),
        np.ascontiguousarray(lam, dtype=float),
        np.ascontiguousarray(sig2_prev, dtype=float),
        np.ascontiguousarray(omega, dtype=float),
        mu,
        admm_cfg.rho, admm_cfg.tol, admm_cfg.max_iter,
        admm_cfg.newton_tol, admm_cfg.newton_max_iter,
        iters, resid,
    )
    sig2 = np.empty_like(mu)
    _backend.sigma2_batch(mu, np.diag(omega).copy(), sig2)
    return mu, sig2, int(bad)


def _mstep_group(group: GroupData, mu, sig2, penalties, hyper, config,
                 omega_warm):
    """Coefficient update, scatter and weighted glasso for one group.
    Returns (omega, beta)."""
    beta = update_beta(mu, group.offsets, group.covariates)
    lam_new = group.offsets + group.covariates @ beta.T
    scat = scatter_matrix(mu, sig2, lam_new)
    problem = wglasso.GlassoProblem(
        scatter=scat.value, n_k=scat.n_k, penalties=penalties,
        diag_rate=hyper.diag_rate, tol=config.glasso_tol,
        max_sweeps=config.glasso_max_sweeps,
    )
    omega = wglasso.solve(problem, warm_start=omega_warm)
    check_positive_definite(omega, "glasso update")
    return omega, beta


def _chunk_worker(fn, chunk):
    return [fn(*args) for args in chunk]


def _run_tasks(pool, fn, args_list, workers=1):
    """Run tasks in order, chunked one submission per worker to keep IPC low.

    Chunking never affects results: tasks are independent and outputs are
    reassembled in argument order.
    """
    if pool is None:
        return [fn(*args) for args in args_list]
    n = len(args_list)
    chunks = [args_list[i::workers] for i in range(min(workers, n))]
    futures = [pool.submit(_chunk_worker, fn, chunk) for chunk in chunks]
    results = [None] * n
    for i, fut in enumerate(futures):
        for j, res in enumerate(fut.result()):
            results[i + j * len(chunks)] = res
    return results


def fit(dataset: CountDataset, hyper: Hyperparameters,
        config: Optional[FitConfig] = None,
        ) -> tuple[ModelState, VariationalState, FitReport]:
    """Run the variational EM loop to convergence.

    Returns the final model state (symmetric PD precision matrices and
    coefficients), the variational state, and a report with the convergence
    trace, per-group variational EBIC and per-phase timings (E/M phases are
    summed across workers; "total" is wall clock). Solver failures are
    re-raised with (group, iteration) context.
    """
    config = config or FitConfig()
    dataset.validate()
    state, varstate = initialize(dataset)
    omegas, betas = state.omegas, state.betas
    mus, sig2s = varstate.means, varstate.variances
    groups = dataset.groups
    n_groups = dataset.n_groups

    report = FitReport(hyper=hyper)
    # estep/mstep are summed across workers; inclusion and total are wall
    timings = {"inclusion": 0.0, "estep": 0.0, "mstep": 0.0, "total": 0.0}
    wall_start = time.perf_counter()
    workers = min(config.resolved_threads(), n_groups)
    pool = ProcessPoolExecutor(max_workers=workers,
                               initializer=_limit_worker_blas) \
        if workers > 1 else None

    try:
        with threadpool_limits(limits=1):
            for t in range(config.max_outer_iter):
                tic = time.perf_counter()
                penalties = inclusion_state(omegas, hyper).penalties
                timings["inclusion"] += time.perf_counter() - tic

                results = _run_tasks(pool, _group_iteration, [
                    (k, t, groups[k],
                     groups[k].offsets + groups[k].covariates @ betas[k].T,
                     sig2s[k], omegas[k], mus[k], penalties, hyper, config)
                    for k in range(n_groups)
                ], workers=workers)

                delta = 0.0
                for k, (mu, sig2, beta, omega_new, bad, times) in \
                        enumerate(results):
                    mus[k] = mu
                    sig2s[k] = sig2
                    delta = max(delta, float(
                        np.max(np.abs(omega_new - omegas[k]))
                    ))
                    omegas[k] = omega_new
                    betas[k] = beta
                    report.admm_nonconverged += bad
                    timings["estep"] += times[0]
                    timings["mstep"] += times[1]
                report.delta_trace.append(delta)
                report.outer_iterations = t + 1
                if delta <= config.outer_tol:
                    report.converged = True
                    break
    finally:
        if pool is not None:
            pool.shutdown()

    gamma = 0.5  # EBIC model-space weight used for reporting
    for k in range(n_groups):
        ll = variational_loglik(groups[k], omegas[k], betas[k],
                                mus[k], sig2s[k])
        edges = len(edge_set(omegas[k], EDGE_THRESHOLD))
        report.loglik.append(ll)
        report.edge_counts.append(edges)
        report.ebic.append(variational_ebic(
            ll, edges, dataset.p, dataset.d, groups[k].n_obs, gamma
        ))
    report.total_ebic = float(sum(report.ebic))
    timings["total"] = time.perf_counter() - wall_start
    report.timings = timings
    return (ModelState(omegas, betas), VariationalState(mus, sig2s), report)


_worker_blas_limit = None


def _limit_worker_blas():
    # keep a reference so the limit lasts for the worker's lifetime
    global _worker_blas_limit
    _worker_blas_limit = threadpool_limits(limits=1)


def _group_iteration(k, t, group, lam, sig2_prev, omega, mu_warm, penalties,
                     hyper, config):
    """One group's E-step plus M-step; the per-iteration unit of parallelism.

    Returns (mu, sigma2, beta, omega_new, n_admm_nonconverged, phase_times).
    """
    try:
        tic = time.perf_counter()
        mu, sig2, bad = _estep_group(group.counts, lam, sig2_prev, omega,
                                     mu_warm, config.admm)
        t_e = time.perf_counter() - tic
        tic = time.perf_counter()
        omega_new, beta = _mstep_group(group, mu, sig2, penalties, hyper,
                                       config, omega)
        t_m = time.perf_counter() - tic
        return mu, sig2, beta, omega_new, bad, (t_e, t_m)
    except Exception as e:
        raise SolverError(
            f"group {k + 1}, outer iteration {t}: {e}"
        ) from e


def grid_fit(dataset: CountDataset, grid: Sequence[Hyperparameters],
             gamma: float = 0.5, config: Optional[FitConfig] = None,
             ) -> tuple[ModelState, list[FitReport]]:
    """Fit every grid point and keep the one with the smallest summed
    variational EBIC; ties go to the larger spike scale (sparser prior)."""
    if not grid:
        raise ValueError("grid must be non-empty")
    config = config or FitConfig()

    results = []
    reports = []
    failures = []
    for hyper in grid:
        try:
            state, varstate, report = fit(dataset, hyper, config)
        except Exception as e:
            failures.append((hyper, e))
            continue
        if gamma != 0.5:
            # recompute the selection criterion at the requested gamma
            report.ebic = [
                variational_ebic(report.loglik[k], report.edge_counts[k],
                                 dataset.p, dataset.d,
                                 dataset.groups[k].n_obs, gamma)
                for k in range(dataset.n_groups)
            ]
            report.total_ebic = float(sum(report.ebic))
        results.append((state, varstate, report))
        reports.append(report)

    if not results:
        detail = "; ".join(f"v0={h.v0:g}: {e}" for h, e in failures)
        raise SolverError(f"all {len(grid)} grid points failed: {detail}")

    best = select_best(reports)
    reports[best].selected = True
    return results[best][0], reports


def select_best(reports: Sequence[FitReport]) -> int:
    """Index of the report with the smallest total EBIC; ties go to the
    larger spike scale v0."""
    return min(range(len(reports)),
               key=lambda i: (reports[i].total_ebic, -reports[i].hyper.v0))
