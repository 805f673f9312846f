"""Pure NumPy implementations of the hot kernels.

Same call signatures as the compiled extension (``plnet._backend._core``);
used as a fallback when the extension is not built, and in tests as a
cross-check. All functions are deterministic and thread-safe (no shared
mutable state beyond their output arguments).
"""

import numpy as np
from scipy.linalg import cho_factor, cho_solve

# exp() argument cap: beyond this the stationarity functions are treated as
# +inf, which only affects bracketing, never the returned root.
_EXP_CAP = 700.0


def _exp_safe(x):
    return np.exp(np.minimum(x, _EXP_CAP))


def _newton_mu_vec(y, sig2, alpha, mu_n, rho, tol, max_iter):
    """Vectorized safeguarded Newton for exp(m + s/2) + rho*m + q = 0.

    q = alpha - rho*mu_n - y. The function is strictly increasing and convex,
    so a sign-changing bracket always exists; Newton steps that leave the
    bracket fall back to bisection.
    """
    c = 0.5 * sig2
    q = alpha - rho * mu_n - y

    def g(x):
        return _exp_safe(x + c) + rho * x + q

    x = np.array(mu_n, dtype=float, copy=True)
    gx = g(x)
    lo = np.where(gx <= 0.0, x, x - 1.0)
    hi = np.where(gx <= 0.0, x + 1.0, x)

    step = 1.0
    for _ in range(200):
        glo = g(lo)
        ghi = g(hi)
        bad_lo = glo > 0.0
        bad_hi = ghi < 0.0
        if not (bad_lo.any() or bad_hi.any()):
            break
        step *= 2.0
        lo = np.where(bad_lo, lo - step, lo)
        hi = np.where(bad_hi, hi + step, hi)

    x = np.clip(x, lo, hi)
    for _ in range(max_iter):
        gx = g(x)
        done = np.abs(gx) < tol
        width_tiny = (hi - lo) <= 1e-15 * np.maximum(1.0, np.abs(x))
        if np.all(done | width_tiny):
            break
        hi = np.where(gx > 0.0, x, hi)
        lo = np.where(gx <= 0.0, x, lo)
        dg = _exp_safe(x + c) + rho
        xn = x - gx / dg
        outside = (xn <= lo) | (xn >= hi)
        xn = np.where(outside, 0.5 * (lo + hi), xn)
        x = np.where(done, x, xn)
    return x


def admm_batch(y, lam, sig2, omega, mu, rho, tol, max_iter, newton_tol,
               newton_max_iter, iters, resid):
    """Run the consensus ADMM for every row of a group in lock step.

    ``mu`` holds the warm start for the consensus iterate on entry and the
    returned variational means on exit. Rows are frozen as soon as their
    primal residual drops to ``tol``, so results are identical to solving
    each row on its own. Returns the number of rows that hit ``max_iter``
    without converging.
    """
    n, p = y.shape
    factor = cho_factor(omega + rho * np.eye(p), lower=True)
    omlam = lam @ omega  # omega symmetric: row i is omega @ lam[i]

    mu_n = mu.copy()
    alpha = np.zeros_like(mu)
    delta = np.full(n, np.inf)
    count = np.zeros(n, dtype=np.int32)
    active = np.arange(n)

    for it in range(max_iter):
        if active.size == 0:
            break
        rows = active
        mu_m = _newton_mu_vec(y[rows], sig2[rows], alpha[rows], mu_n[rows],
                              rho, newton_tol, newton_max_iter)
        rhs = rho * mu_m + alpha[rows] + omlam[rows]
        mu_n_new = cho_solve(factor, rhs.T).T
        alpha[rows] += rho * (mu_m - mu_n_new)
        d = np.max(np.abs(mu_m - mu_n_new), axis=1)
        mu[rows] = mu_m
        mu_n[rows] = mu_n_new
        delta[rows] = d
        count[rows] = it + 1
        active = rows[d > tol]

    iters[:] = count
    resid[:] = delta
    return int(np.count_nonzero(delta > tol))


def sigma2_batch(mu, omega_diag, out):
    """Solve s*w + s*exp(mu + s/2) = 1 elementwise for s in (0, 1/w].

    Bisection down to a bracket width of 1e-12 followed by a short Newton
    polish, matching the scalar solver bit for bit up to libm differences.
    """
    w = np.broadcast_to(omega_diag, mu.shape)
    lo = np.zeros_like(mu)
    hi = 1.0 / np.broadcast_to(omega_diag, mu.shape).astype(float)
    hi = np.array(hi, copy=True)

    for _ in range(200):
        if np.all(hi - lo <= 1e-12):
            break
        mid = 0.5 * (lo + hi)
        h = mid * w + mid * _exp_safe(mu + 0.5 * mid) - 1.0
        pos = h > 0.0
        hi = np.where(pos, mid, hi)
        lo = np.where(pos, lo, mid)

    x = 0.5 * (lo + hi)
    for _ in range(3):
        e = _exp_safe(mu + 0.5 * x)
        h = x * w + x * e - 1.0
        hp = w + e * (1.0 + 0.5 * x)
        xn = x - h / hp
        ok = (xn > lo) & (xn <= hi)
        x = np.where(ok, xn, x)
    out[:] = x
    return out


def _soft(v, t):
    if v > t:
        return v - t
    if v < -t:
        return v + t
    return 0.0


def glasso_cd(shat, lam, thr, inner_thr, max_sweeps, W, B):
    """Block coordinate descent for the elementwise-penalized graphical lasso.

    ``shat`` is the normalized scatter with the diagonal shift already folded
    in; ``lam`` the elementwise penalty (diagonal ignored). ``W`` (working
    covariance) and ``B`` ((p-1) x p lasso coefficients) are updated in place
    so callers can warm start or single-step the sweeps. Returns
    ``(sweeps_done, last_max_change)``.
    """
    p = shat.shape[0]
    if p < 2:
        return 0, 0.0
    idx = np.arange(p)
    max_change = np.inf
    sweeps = 0
    max_inner = 1000
    for sweeps in range(1, max_sweeps + 1):
        max_change = 0.0
        for j in range(p):
            mask = idx != j
            V = np.ascontiguousarray(W[np.ix_(mask, mask)])
            s = shat[mask, j]
            lv = lam[mask, j]
            b = B[:, j]
            Vb = V @ b
            for _ in range(max_inner):
                db_max = 0.0
                for m in range(p - 1):
                    r = s[m] - (Vb[m] - V[m, m] * b[m])
                    bn = _soft(r, lv[m]) / V[m, m]
                    db = bn - b[m]
                    if db != 0.0:
                        b[m] = bn
                        Vb += V[:, m] * db
                        if abs(db) > db_max:
                            db_max = abs(db)
                if db_max <= inner_thr:
                    break
            wj = V @ b
            ch = np.max(np.abs(wj - W[mask, j])) if p > 1 else 0.0
            if ch > max_change:
                max_change = ch
            W[mask, j] = wj
            W[j, mask] = wj
        if max_change <= thr:
            break
    return sweeps, max_change
