import math
from types import SimpleNamespace

import numpy as np
import pytest

from plnet import admm, engine, wglasso
from plnet.datasets import (
    AdmmConfig,
    CountDataset,
    FitConfig,
    FitReport,
    GroupData,
    Hyperparameters,
    RankDeficiencyError,
    initialize,
)

from conftest import rand_pd

HYPER = Hyperparameters(p0=0.5, v0=0.1, v1=1.0)


# --- posterior inclusion and penalties ----------------------------------------

def test_posterior_inclusion_degenerate_scales():
    # v1 == v0 bypasses the v1 > v0 invariant on purpose: both v-dependent
    # factors collapse and the posterior equals the prior
    hyper = SimpleNamespace(p0=0.3, v0=0.5, v1=0.5)
    for abs_sum in (0.0, 1.0, 50.0):
        for k in (1, 5):
            assert engine.posterior_inclusion(abs_sum, k, hyper) == \
                pytest.approx(0.3, abs=1e-14)


def test_posterior_inclusion_closed_forms():
    assert engine.posterior_inclusion(0.0, 1, HYPER) == \
        pytest.approx(1.0 / 11.0, abs=1e-12)
    # frozen from a direct scalar evaluation of the closed form
    assert engine.posterior_inclusion(0.5, 2, HYPER) == \
        pytest.approx(0.4737316613740217, abs=1e-12)


def test_posterior_inclusion_monotone_and_bounded():
    # strictly increasing while the sigmoid is float-representable below 1
    values = [engine.posterior_inclusion(a, 3, HYPER)
              for a in np.linspace(0.0, 3.5, 100)]
    assert all(b > a for a, b in zip(values, values[1:]))
    lower = 1.0 / (1.0 + (0.5 / 0.5) * (1.0 / 0.1) ** 3)
    assert values[0] == pytest.approx(lower, abs=1e-12)
    assert all(lower - 1e-15 <= v < 1.0 for v in values)


def test_penalty_matrix_boundaries_and_midpoint():
    hyper = HYPER
    assert engine.penalty_matrix(np.array(1.0), hyper) == pytest.approx(1.0)
    assert engine.penalty_matrix(np.array(0.0), hyper) == pytest.approx(10.0)
    assert engine.penalty_matrix(np.array(0.5), hyper) == pytest.approx(5.5)
    probs = np.random.default_rng(0).uniform(0, 1, (4, 4))
    pen = engine.penalty_matrix(probs, hyper)
    assert np.all(pen >= 1.0) and np.all(pen <= 10.0)


def test_inclusion_state_matches_scalar_op():
    rng = np.random.default_rng(1)
    omegas = [rand_pd(rng, 4) for _ in range(3)]
    state = engine.inclusion_state(omegas, HYPER)
    abs_sum = sum(np.abs(om) for om in omegas)
    i, j = 0, 2
    assert state.probs[i, j] == pytest.approx(
        engine.posterior_inclusion(abs_sum[i, j], 3, HYPER), rel=1e-12)
    assert np.allclose(state.penalties,
                       state.probs / HYPER.v1 + (1 - state.probs) / HYPER.v0)
    # penalties live between the slab and spike rates
    off = ~np.eye(4, dtype=bool)
    assert np.all(state.penalties[off] >= 1.0 / HYPER.v1 - 1e-12)
    assert np.all(state.penalties[off] <= 1.0 / HYPER.v0 + 1e-12)


# --- beta update ---------------------------------------------------------------

def test_update_beta_intercept_only_is_column_mean():
    rng = np.random.default_rng(2)
    mu = rng.normal(0, 1, (7, 3))
    z = np.ones((7, 1))
    beta = engine.update_beta(mu, np.zeros_like(mu), z)
    assert np.allclose(beta[:, 0], mu.mean(axis=0), atol=1e-12)


def test_update_beta_zero_residual_target():
    rng = np.random.default_rng(3)
    mu = rng.normal(0, 1, (5, 2))
    z = rng.normal(0, 1, (5, 2))
    beta = engine.update_beta(mu, mu, z)
    assert np.max(np.abs(beta)) < 1e-12


def test_update_beta_matches_normal_equations_oracle():
    rng = np.random.default_rng(4)
    n, p, d = 6, 2, 2
    mu = rng.normal(0, 1, (n, p))
    o = rng.normal(0, 1, (n, p))
    z = rng.normal(0, 1, (n, d))
    beta = engine.update_beta(mu, o, z)
    # explicit 2x2 inversion
    g = z.T @ z
    det = g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]
    ginv = np.array([[g[1, 1], -g[0, 1]], [-g[1, 0], g[0, 0]]]) / det
    oracle = (mu - o).T @ z @ ginv
    assert np.max(np.abs(beta - oracle)) < 1e-10
    resid = mu - o - z @ beta.T
    assert np.max(np.abs(resid.T @ z)) < 1e-10


def test_update_beta_singular_gram_names_d():
    z = np.ones((4, 2))  # duplicated column: rank 1
    with pytest.raises(RankDeficiencyError, match="d=2"):
        engine.update_beta(np.zeros((4, 3)), np.zeros((4, 3)), z)


# --- scatter -------------------------------------------------------------------

def test_scatter_single_observation_at_mean():
    sig2 = np.array([[0.3, 0.7]])
    s = engine.scatter_matrix(np.array([[1.0, 2.0]]), sig2,
                              np.array([[1.0, 2.0]]))
    assert np.allclose(s.value, np.diag([0.3, 0.7]))
    assert s.n_k == 1


def test_scatter_pure_outer_product():
    s = engine.scatter_matrix(np.array([[1.0, 0.0]]),
                              np.full((1, 2), 1e-300),
                              np.array([[0.0, 0.0]]))
    assert np.allclose(s.value, [[1.0, 0.0], [0.0, 0.0]], atol=1e-290)


def test_scatter_matches_loop_oracle_exactly():
    rng = np.random.default_rng(5)
    mu = rng.normal(0, 1, (3, 4))
    sig2 = rng.uniform(0.1, 1.0, (3, 4))
    lam = rng.normal(0, 1, (3, 4))
    s = engine.scatter_matrix(mu, sig2, lam)
    oracle = np.zeros((4, 4))
    for i in range(3):
        d = mu[i] - lam[i]
        oracle += np.outer(d, d) + np.diag(sig2[i])
    assert np.allclose(s.value, oracle, atol=1e-12)
    x = rng.normal(0, 1, (100, 4))
    assert np.all(np.einsum("ij,jk,ik->i", x, s.value, x) >= -1e-10)


# --- variational likelihood and EBIC --------------------------------------------

def test_variational_loglik_scalar_oracle():
    group = GroupData(counts=np.array([[0.0]]), covariates=np.ones((1, 1)),
                      offsets=np.zeros((1, 1)))
    ll = engine.variational_loglik(group, np.array([[1.0]]),
                                   np.zeros((1, 1)), np.array([[0.0]]),
                                   np.array([[1.0]]))
    # frozen term-by-term: -e^{1/2} - 1/2 - log(2 pi)/2
    assert ll == pytest.approx(-3.067659803904801, abs=1e-12)


def test_variational_loglik_quadratic_vanishes_at_mean():
    rng = np.random.default_rng(6)
    n, p = 4, 3
    z = rng.normal(0, 1, (n, 1))
    beta = rng.normal(0, 1, (p, 1))
    off = rng.normal(0, 1, (n, p))
    y = rng.poisson(2.0, (n, p)).astype(float)
    omega = np.eye(p)
    sig2 = rng.uniform(0.2, 1.0, (n, p))
    lam = off + z @ beta.T
    g1 = GroupData(counts=y, covariates=z, offsets=off)
    g2 = GroupData(counts=y, covariates=z, offsets=2 * off)
    ll1 = engine.variational_loglik(g1, omega, beta, lam, sig2)
    lam2 = 2 * off + z @ beta.T
    ll2 = engine.variational_loglik(g2, omega, beta, lam2, sig2)
    # mu = lam in both: quadratic term is zero, only the Poisson term moved
    pois1 = np.sum(y * lam - np.exp(lam + sig2 / 2))
    pois2 = np.sum(y * lam2 - np.exp(lam2 + sig2 / 2))
    assert ll2 - ll1 == pytest.approx(pois2 - pois1, rel=1e-10)


def test_variational_loglik_logdet_term():
    rng = np.random.default_rng(7)
    n, p = 5, 2
    z = np.ones((n, 1))
    beta = np.zeros((p, 1))
    y = rng.poisson(1.0, (n, p)).astype(float)
    mu = np.zeros((n, p))
    sig2 = rng.uniform(0.2, 1.0, (n, p))
    g = GroupData(counts=y, covariates=z, offsets=np.zeros((n, p)))
    ll_2i = engine.variational_loglik(g, 2.0 * np.eye(p), beta, mu, sig2)
    ll_i = engine.variational_loglik(g, np.eye(p), beta, mu, sig2)
    # mu = lam = 0: difference is n/2 log|2I| minus the extra trace part
    expected = 0.5 * n * math.log(4.0) - 0.5 * np.sum(sig2)
    assert ll_2i - ll_i == pytest.approx(expected, rel=1e-10)


def test_variational_ebic_values():
    assert engine.variational_ebic(0.0, 0, 2, 1, 10, 0.5) == \
        pytest.approx(2 * math.log(10), abs=1e-12)
    # gamma=0 reduces to BIC with |E| + p*d parameters
    assert engine.variational_ebic(-3.0, 2, 3, 2, 20, 0.0) == \
        pytest.approx(6.0 + 8 * math.log(20), abs=1e-12)
    # frozen log-gamma oracle: 200 + 7 log 50 + 0.5 log C(10,3)
    assert engine.variational_ebic(-100.0, 3, 4, 1, 50, 0.5) == \
        pytest.approx(229.77790690938804, abs=1e-10)


def test_default_grid_values():
    grid = engine.default_grid(10, 20, 1000)
    base = math.sqrt(10 * math.log(20) / 1000)
    assert base == pytest.approx(0.17308183826022852, abs=1e-15)
    assert [h.v0 for h in grid] == pytest.approx(
        [m * base for m in (0.1, 0.25, 0.5, 1.0, 5.0)], rel=1e-12)
    assert all(h.v1 == pytest.approx(10 * h.v0) for h in grid)
    assert all(h.p0 == 0.5 and math.isinf(h.tau) for h in grid)


# --- fit ------------------------------------------------------------------------

def tiny_dataset(seed=0, n_groups=2, n=4, p=2, d=1):
    rng = np.random.default_rng(seed)
    groups = [
        GroupData(
            counts=rng.poisson(2.0, (n, p)).astype(float),
            covariates=rng.standard_normal((n, d)),
            offsets=rng.standard_normal((n, p)) * 0.1,
        )
        for _ in range(n_groups)
    ]
    return CountDataset(groups)


def test_fit_zero_iterations_returns_initialization():
    ds = tiny_dataset()
    state, var, report = engine.fit(ds, HYPER,
                                    FitConfig(max_outer_iter=0, threads=1))
    state0, var0 = initialize(ds)
    assert report.outer_iterations == 0
    assert report.delta_trace == []
    for a, b in zip(state.omegas, state0.omegas):
        assert np.array_equal(a, b)
    for a, b in zip(var.means, var0.means):
        assert np.array_equal(a, b)


def test_fit_one_iteration_matches_pipeline_oracle():
    """Hand-scripted first iteration: inclusion probabilities, ADMM mean
    update, variance solves, beta, scatter, weighted glasso, in that order."""
    ds = tiny_dataset(seed=42)
    config = FitConfig(max_outer_iter=1, threads=1)
    state, var, report = engine.fit(ds, HYPER, config)

    state0, var0 = initialize(ds)
    abs_sum = np.abs(state0.omegas[0]) + np.abs(state0.omegas[1])
    p = ds.p
    probs = np.array([[engine.posterior_inclusion(abs_sum[i, j], 2, HYPER)
                       for j in range(p)] for i in range(p)])
    penalties = engine.penalty_matrix(probs, HYPER)

    for k, g in enumerate(ds.groups):
        lam = g.offsets + g.covariates @ state0.betas[k].T
        mu = np.empty_like(lam)
        sig2 = np.empty_like(lam)
        for i in range(g.n_obs):
            st = admm.solve_mu(g.counts[i], lam[i], var0.variances[k][i],
                               state0.omegas[k], config.admm,
                               mu0=var0.means[k][i])
            mu[i] = st.mu_m
            for j in range(p):
                sig2[i, j] = admm.solve_sigma2(mu[i, j],
                                               state0.omegas[k][j, j])
        beta = engine.update_beta(mu, g.offsets, g.covariates)
        lam_new = g.offsets + g.covariates @ beta.T
        scat = engine.scatter_matrix(mu, sig2, lam_new)
        pr = wglasso.GlassoProblem(scatter=scat.value, n_k=scat.n_k,
                                   penalties=penalties,
                                   diag_rate=HYPER.diag_rate,
                                   tol=config.glasso_tol,
                                   max_sweeps=config.glasso_max_sweeps)
        omega = wglasso.solve(pr, warm_start=state0.omegas[k])

        assert np.max(np.abs(var.means[k] - mu)) < 1e-8
        assert np.max(np.abs(var.variances[k] - sig2)) < 1e-8
        assert np.max(np.abs(state.betas[k] - beta)) < 1e-8
        assert np.max(np.abs(state.omegas[k] - omega)) < 1e-8


def test_fit_converges_and_reports():
    ds = tiny_dataset(seed=7, n_groups=2, n=12, p=3)
    state, var, report = engine.fit(
        ds, HYPER, FitConfig(max_outer_iter=500, outer_tol=1e-3, threads=1))
    assert report.converged
    assert report.outer_iterations < 500
    assert len(report.delta_trace) == report.outer_iterations
    assert report.delta_trace[-1] <= 1e-3
    assert all(np.isfinite(report.delta_trace))
    for om in state.omegas:
        np.linalg.cholesky(om)
    assert len(report.ebic) == 2 and all(np.isfinite(report.ebic))
    assert report.timings["total"] > 0


def test_fit_single_group_matches_direct_subset():
    ds = tiny_dataset(seed=9, n_groups=3, n=8, p=3)
    sub = CountDataset([ds.groups[1]])
    cfg = FitConfig(max_outer_iter=20, threads=1)
    s1, _, _ = engine.fit(sub, HYPER, cfg)
    s2, _, _ = engine.fit(CountDataset([ds.groups[1]]), HYPER, cfg)
    assert np.array_equal(s1.omegas[0], s2.omegas[0])


def test_fit_deterministic_across_worker_counts():
    ds = tiny_dataset(seed=10, n_groups=3, n=10, p=3)
    sols = {}
    for threads in (1, 3):
        state, _, _ = engine.fit(ds, HYPER,
                                 FitConfig(max_outer_iter=8, threads=threads))
        sols[threads] = state
    for a, b in zip(sols[1].omegas, sols[3].omegas):
        assert np.array_equal(a, b)
    for a, b in zip(sols[1].betas, sols[3].betas):
        assert np.array_equal(a, b)


# --- grid ------------------------------------------------------------------------

def test_grid_singleton_matches_fit():
    ds = tiny_dataset(seed=11, n_groups=2, n=8, p=3)
    cfg = FitConfig(max_outer_iter=10, threads=1)
    state, reports = engine.grid_fit(ds, [HYPER], config=cfg)
    direct, _, _ = engine.fit(ds, HYPER, cfg)
    assert len(reports) == 1 and reports[0].selected
    for a, b in zip(state.omegas, direct.omegas):
        assert np.array_equal(a, b)


def test_grid_selects_minimum_ebic():
    ds = tiny_dataset(seed=12, n_groups=2, n=10, p=3)
    grid = engine.default_grid(2, 3, 20)
    cfg = FitConfig(max_outer_iter=10, threads=1)
    state, reports = engine.grid_fit(ds, grid, config=cfg)
    totals = [r.total_ebic for r in reports]
    chosen = [r for r in reports if r.selected]
    assert len(chosen) == 1
    assert chosen[0].total_ebic == min(totals)


def test_select_best_breaks_ties_toward_larger_v0():
    reports = [
        FitReport(hyper=Hyperparameters(v0=0.1, v1=1.0), total_ebic=5.0),
        FitReport(hyper=Hyperparameters(v0=0.2, v1=2.0), total_ebic=5.0),
        FitReport(hyper=Hyperparameters(v0=0.3, v1=3.0), total_ebic=9.0),
    ]
    assert engine.select_best(reports) == 1


def test_grid_rejects_empty():
    with pytest.raises(ValueError):
        engine.grid_fit(tiny_dataset(), [], config=FitConfig(threads=1))


def test_fit_handles_single_dimension():
    rng = np.random.default_rng(0)
    ds = CountDataset([GroupData(rng.poisson(3.0, (20, 1)).astype(float),
                                 np.ones((20, 1)), np.zeros((20, 1)))])
    state, _, report = engine.fit(ds, HYPER,
                                  FitConfig(max_outer_iter=10, threads=1))
    assert state.omegas[0].shape == (1, 1) and state.omegas[0][0, 0] > 0
    assert np.isfinite(report.ebic[0])


def test_estimates_improve_with_sample_size():
    from plnet import metrics, simulate

    spec = simulate.GraphSpec(kind="er_shared", p=8, n_groups=2, s=0.6)
    scores = {}
    for n in (40, 240):
        res = simulate.simulate_dataset(spec, n=n, seed=9)
        grid = engine.default_grid(2, 8, 2 * n)
        st, _ = engine.grid_fit(res.dataset, grid,
                                config=FitConfig(max_outer_iter=20, threads=1))
        mofes = [metrics.mofe(st.omegas[k], res.omegas[k]) for k in range(2)]
        mccs = [metrics.mcc(metrics.confusion(
            metrics.edge_set(st.omegas[k]), metrics.edge_set(res.omegas[k]),
            8)) for k in range(2)]
        scores[n] = (float(np.mean(mofes)), float(np.mean(mccs)))
    assert scores[240][0] < scores[40][0]   # matrix error shrinks
    assert scores[240][1] > scores[40][1]   # edge recovery improves
