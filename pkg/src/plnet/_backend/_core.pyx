# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: batched consensus ADMM, variance root solves and the
elementwise-penalized graphical lasso sweeps.

Signatures mirror ``py_core``; the heavy loops run without the GIL so the
engine can farm groups out to a thread pool.
"""

from libc.math cimport exp, fabs, sqrt, INFINITY
from libc.stdlib cimport free, malloc

import numpy as np

cdef double EXP_CAP = 700.0


cdef inline double _exp_safe(double x) nogil:
    if x > EXP_CAP:
        return exp(EXP_CAP)
    return exp(x)


cdef inline double _soft(double v, double t) nogil:
    if v > t:
        return v - t
    if v < -t:
        return v + t
    return 0.0


cdef int _chol(double* a, int p) nogil:
    """In-place lower Cholesky of a row-major p x p matrix; -1 if not PD."""
    cdef int i, j, m
    cdef double s, d
    for j in range(p):
        s = a[j * p + j]
        for m in range(j):
            s -= a[j * p + m] * a[j * p + m]
        if s <= 0.0:
            return -1
        d = sqrt(s)
        a[j * p + j] = d
        for i in range(j + 1, p):
            s = a[i * p + j]
            for m in range(j):
                s -= a[i * p + m] * a[j * p + m]
            a[i * p + j] = s / d
    return 0


cdef void _chol_solve(double* L, double* b, double* x, int p) nogil:
    cdef int i, m
    cdef double s
    for i in range(p):
        s = b[i]
        for m in range(i):
            s -= L[i * p + m] * x[m]
        x[i] = s / L[i * p + i]
    for i in range(p - 1, -1, -1):
        s = x[i]
        for m in range(i + 1, p):
            s -= L[m * p + i] * x[m]
        x[i] = s / L[i * p + i]


cdef double _root_mu(double c, double rho, double q, double x0,
                     double tol, int max_iter, int* fail) nogil:
    """Root of exp(x + c) + rho*x + q = 0 by bracketed Newton."""
    cdef double lo, hi, x, gx, dg, xn, step
    cdef int it

    x = x0
    gx = _exp_safe(x + c) + rho * x + q
    if gx == 0.0:
        return x
    if gx > 0.0:
        hi = x
        lo = x - 1.0
        step = 1.0
        while _exp_safe(lo + c) + rho * lo + q > 0.0:
            step *= 2.0
            lo -= step
            if step > 1e60:
                fail[0] = 1
                return x
    else:
        lo = x
        hi = x + 1.0
        step = 1.0
        while _exp_safe(hi + c) + rho * hi + q < 0.0:
            step *= 2.0
            hi += step
            if step > 1e60:
                fail[0] = 1
                return x

    if x < lo:
        x = lo
    elif x > hi:
        x = hi
    for it in range(max_iter):
        gx = _exp_safe(x + c) + rho * x + q
        if fabs(gx) < tol:
            return x
        if gx > 0.0:
            hi = x
        else:
            lo = x
        if hi - lo <= 1e-15 * (1.0 if fabs(x) < 1.0 else fabs(x)):
            return x
        dg = _exp_safe(x + c) + rho
        xn = x - gx / dg
        if xn <= lo or xn >= hi:
            xn = 0.5 * (lo + hi)
        x = xn
    fail[0] = 1
    return x


def admm_batch(const double[:, ::1] y, const double[:, ::1] lam,
               const double[:, ::1] sig2,
               const double[:, ::1] omega, double[:, ::1] mu,
               double rho, double tol, int max_iter,
               double newton_tol, int newton_max_iter,
               int[::1] iters, double[::1] resid):
    """Consensus ADMM per row; ``mu`` is warm start in, solution out.

    Returns the number of rows still above ``tol`` after ``max_iter``.
    Raises if the shifted precision matrix fails its Cholesky factorization
    or the scalar Newton solves stall (unreachable with valid inputs).
    """
    cdef int n = y.shape[0]
    cdef int p = y.shape[1]
    cdef int i, j, m, it, bad, fail
    cdef double d, delta
    cdef double* L = <double*> malloc(p * p * sizeof(double))
    cdef double* work = <double*> malloc(5 * p * sizeof(double))
    if L == NULL or work == NULL:
        free(L); free(work)
        raise MemoryError()
    cdef double* mu_n = work
    cdef double* mu_m = work + p
    cdef double* alpha = work + 2 * p
    cdef double* rhs = work + 3 * p
    cdef double* omlam = work + 4 * p
    cdef int cholbad = 0
    bad = 0
    fail = 0

    with nogil:
        for i in range(p):
            for j in range(p):
                L[i * p + j] = omega[i, j]
            L[i * p + i] += rho
        cholbad = _chol(L, p)
        if cholbad == 0:
            for i in range(n):
                for j in range(p):
                    d = 0.0
                    for m in range(p):
                        d += omega[j, m] * lam[i, m]
                    omlam[j] = d
                    mu_n[j] = mu[i, j]
                    mu_m[j] = mu[i, j]
                    alpha[j] = 0.0
                delta = INFINITY
                it = 0
                while it < max_iter and delta > tol:
                    for j in range(p):
                        mu_m[j] = _root_mu(0.5 * sig2[i, j], rho,
                                           alpha[j] - rho * mu_n[j] - y[i, j],
                                           mu_n[j], newton_tol,
                                           newton_max_iter, &fail)
                    for j in range(p):
                        rhs[j] = rho * mu_m[j] + alpha[j] + omlam[j]
                    _chol_solve(L, rhs, mu_n, p)
                    delta = 0.0
                    for j in range(p):
                        alpha[j] += rho * (mu_m[j] - mu_n[j])
                        d = fabs(mu_m[j] - mu_n[j])
                        if d > delta:
                            delta = d
                    it += 1
                for j in range(p):
                    mu[i, j] = mu_m[j]
                iters[i] = it
                resid[i] = delta
                if delta > tol:
                    bad += 1

    free(L)
    free(work)
    if cholbad != 0:
        raise np.linalg.LinAlgError("omega + rho*I is not positive definite")
    if fail != 0:
        raise RuntimeError("scalar Newton solve did not converge")
    return bad


cdef double _root_sigma2(double m, double w) nogil:
    """Root of s*w + s*exp(m + s/2) = 1 on (0, 1/w]."""
    cdef double lo = 0.0
    cdef double hi = 1.0 / w
    cdef double mid, h, x, e, hp, xn
    cdef int it
    for it in range(200):
        if hi - lo <= 1e-12:
            break
        mid = 0.5 * (lo + hi)
        h = mid * w + mid * _exp_safe(m + 0.5 * mid) - 1.0
        if h > 0.0:
            hi = mid
        else:
            lo = mid
    x = 0.5 * (lo + hi)
    for it in range(3):
        e = _exp_safe(m + 0.5 * x)
        h = x * w + x * e - 1.0
        hp = w + e * (1.0 + 0.5 * x)
        xn = x - h / hp
        if xn > lo and xn <= hi:
            x = xn
    return x


def sigma2_batch(const double[:, ::1] mu, const double[::1] omega_diag,
                 double[:, ::1] out):
    cdef int n = mu.shape[0]
    cdef int p = mu.shape[1]
    cdef int i, j
    with nogil:
        for i in range(n):
            for j in range(p):
                out[i, j] = _root_sigma2(mu[i, j], omega_diag[j])
    return np.asarray(out)


def glasso_cd(const double[:, ::1] shat, const double[:, ::1] lam,
              double thr, double inner_thr, int max_sweeps,
              double[:, ::1] W, double[:, ::1] B):
    """One-to-one port of ``py_core.glasso_cd`` (same sweep order)."""
    cdef int p = shat.shape[0]
    cdef int q = p - 1
    cdef int sweeps, j, m, l, k, g, inner
    cdef double max_change, db_max, r, bn, db, ch, d
    if p < 2:
        return 0, 0.0
    cdef double* V = <double*> malloc(q * q * sizeof(double))
    cdef double* s = <double*> malloc(q * sizeof(double))
    cdef double* lv = <double*> malloc(q * sizeof(double))
    cdef double* b = <double*> malloc(q * sizeof(double))
    cdef double* Vb = <double*> malloc(q * sizeof(double))
    cdef double* wj = <double*> malloc(q * sizeof(double))
    if V == NULL or s == NULL or lv == NULL or b == NULL or Vb == NULL or wj == NULL:
        free(V); free(s); free(lv); free(b); free(Vb); free(wj)
        raise MemoryError()
    max_change = INFINITY
    sweeps = 0

    with nogil:
        for sweeps in range(1, max_sweeps + 1):
            max_change = 0.0
            for j in range(p):
                # gather the j-th column subproblem
                k = 0
                for m in range(p):
                    if m == j:
                        continue
                    l = 0
                    for g in range(p):
                        if g == j:
                            continue
                        V[k * q + l] = W[m, g]
                        l += 1
                    s[k] = shat[m, j]
                    lv[k] = lam[m, j]
                    b[k] = B[k, j]
                    k += 1
                for m in range(q):
                    d = 0.0
                    for l in range(q):
                        d += V[m * q + l] * b[l]
                    Vb[m] = d
                for inner in range(1000):
                    db_max = 0.0
                    for m in range(q):
                        r = s[m] - (Vb[m] - V[m * q + m] * b[m])
                        bn = _soft(r, lv[m]) / V[m * q + m]
                        db = bn - b[m]
                        if db != 0.0:
                            b[m] = bn
                            for l in range(q):
                                Vb[l] += V[l * q + m] * db
                            if fabs(db) > db_max:
                                db_max = fabs(db)
                    if db_max <= inner_thr:
                        break
                for m in range(q):
                    d = 0.0
                    for l in range(q):
                        d += V[m * q + l] * b[l]
                    wj[m] = d
                k = 0
                ch = 0.0
                for m in range(p):
                    if m == j:
                        continue
                    d = fabs(wj[k] - W[m, j])
                    if d > ch:
                        ch = d
                    W[m, j] = wj[k]
                    W[j, m] = wj[k]
                    B[k, j] = b[k]
                    k += 1
                if ch > max_change:
                    max_change = ch
            if max_change <= thr:
                break

    free(V); free(s); free(lv); free(b); free(Vb); free(wj)
    return sweeps, max_change
