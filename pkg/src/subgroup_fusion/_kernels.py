"""Compiled inner loops for the coordinate-descent solvers.

All kernels minimize objectives of the form ``||y - X b||^2 + lam * |b|_1 (+ fusion)``
and maintain residuals in place.  Each returns ``(iterations, converged)``
and writes the objective after every full sweep into ``trace`` (slot 0 holds
the starting objective).
"""
import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _soft(z, t):
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


@njit(cache=True, nogil=True)
def lasso_dense(X, y, beta, lam, max_iter, tol, trace):
    n, p = X.shape
    r = y - X @ beta
    colsq = np.empty(p)
    for j in range(p):
        s = 0.0
        for i in range(n):
            s += X[i, j] * X[i, j]
        colsq[j] = s
    obj = r @ r + lam * np.abs(beta).sum()
    trace[0] = obj
    half = 0.5 * lam
    for it in range(max_iter):
        for j in range(p):
            if colsq[j] == 0.0:
                beta[j] = 0.0
                continue
            old = beta[j]
            z = 0.0
            for i in range(n):
                z += X[i, j] * r[i]
            z += colsq[j] * old
            new = _soft(z, half) / colsq[j]
            if new != old:
                d = new - old
                for i in range(n):
                    r[i] -= d * X[i, j]
                beta[j] = new
        new_obj = r @ r + lam * np.abs(beta).sum()
        trace[it + 1] = new_obj
        if not np.isfinite(new_obj):
            return it + 1, False
        if abs(new_obj - obj) / max(1.0, abs(obj)) < tol:
            return it + 1, True
        obj = new_obj
    return max_iter, False


@njit(cache=True, nogil=True)
def lasso_csc(indptr, indices, values, n, y, beta, lam, max_iter, tol, trace):
    p = indptr.shape[0] - 1
    r = y.copy()
    colsq = np.zeros(p)
    for j in range(p):
        for q in range(indptr[j], indptr[j + 1]):
            r[indices[q]] -= values[q] * beta[j]
            colsq[j] += values[q] * values[q]
    obj = r @ r + lam * np.abs(beta).sum()
    trace[0] = obj
    half = 0.5 * lam
    for it in range(max_iter):
        for j in range(p):
            if colsq[j] == 0.0:
                beta[j] = 0.0
                continue
            old = beta[j]
            z = 0.0
            for q in range(indptr[j], indptr[j + 1]):
                z += values[q] * r[indices[q]]
            z += colsq[j] * old
            new = _soft(z, half) / colsq[j]
            if new != old:
                d = new - old
                for q in range(indptr[j], indptr[j + 1]):
                    r[indices[q]] -= d * values[q]
                beta[j] = new
        new_obj = r @ r + lam * np.abs(beta).sum()
        trace[it + 1] = new_obj
        if not np.isfinite(new_obj):
            return it + 1, False
        if abs(new_obj - obj) / max(1.0, abs(obj)) < tol:
            return it + 1, True
        obj = new_obj
    return max_iter, False


@njit(cache=True, nogil=True)
def _fused_l2_obj(r, B, lam, gamma, tau):
    p, K = B.shape
    obj = r @ r + lam * np.abs(B).sum()
    if gamma > 0.0:
        fus = 0.0
        for k in range(K):
            for kp in range(k + 1, K):
                if tau[k, kp] != 0.0:
                    s = 0.0
                    for j in range(p):
                        d = B[j, k] - B[j, kp]
                        s += d * d
                    fus += tau[k, kp] * s
        obj += gamma * fus
    return obj


@njit(cache=True, nogil=True)
def _row_shift(a, b, lam, row):
    """argmin_d a d^2 - 2 b d + lam * sum_k |row_k + d|, for a > 0.

    The objective is convex and piecewise quadratic with kinks at -row_k, so
    the minimizer is a breakpoint or a stationary point of one piece.
    """
    K = row.shape[0]
    pts = np.empty(2 * K + 2)
    m = 0
    kinks = np.sort(-row)
    for q in range(K + 1):
        # on piece q exactly q of the terms row_k + d are positive, so the
        # l1 part has slope lam * (2q - K)
        s = 2 * q - K
        d = (2.0 * b - lam * s) / (2.0 * a)
        lo = -np.inf if q == 0 else kinks[q - 1]
        hi = np.inf if q == K else kinks[q]
        if d < lo:
            d = lo
        elif d > hi:
            d = hi
        pts[m] = d
        m += 1
    for q in range(K):
        pts[m] = kinks[q]
        m += 1
    best_d = 0.0
    best = a * 0.0 - 0.0 + lam * np.abs(row).sum()
    for q in range(m):
        d = pts[q]
        v = a * d * d - 2.0 * b * d + lam * np.abs(row + d).sum()
        if v < best:
            best = v
            best_d = d
    return best_d


@njit(cache=True, nogil=True)
def fused_l2_cd(X, y, offsets, B, lam, gamma, tau, max_iter, tol, trace):
    """Cyclic coordinate descent over covariates.

    Within covariate j the K entries of row j are updated in group order
    using the latest values, then the whole row is moved by the exact
    optimal common shift.  The shift leaves the fusion term unchanged and
    is what lets strongly fused rows travel together.
    """
    n, p = X.shape
    K = B.shape[1]
    r = np.empty(n)
    colsq = np.zeros((p, K))
    for k in range(K):
        a, b = offsets[k], offsets[k + 1]
        for i in range(a, b):
            s = y[i]
            for j in range(p):
                s -= X[i, j] * B[j, k]
            r[i] = s
        for j in range(p):
            s = 0.0
            for i in range(a, b):
                s += X[i, j] * X[i, j]
            colsq[j, k] = s
    tausum = np.zeros(K)
    for k in range(K):
        for kp in range(K):
            if kp != k:
                tausum[k] += tau[k, kp]
    obj = _fused_l2_obj(r, B, lam, gamma, tau)
    trace[0] = obj
    half = 0.5 * lam
    for it in range(max_iter):
        for j in range(p):
            for k in range(K):
                a, b = offsets[k], offsets[k + 1]
                old = B[j, k]
                num = colsq[j, k] * old
                for i in range(a, b):
                    num += X[i, j] * r[i]
                den = colsq[j, k] + gamma * tausum[k]
                if gamma > 0.0:
                    for kp in range(K):
                        if kp != k:
                            num += gamma * tau[k, kp] * B[j, kp]
                if den <= 0.0:
                    new = 0.0
                else:
                    new = _soft(num, half) / den
                if new != old:
                    d = new - old
                    for i in range(a, b):
                        r[i] -= d * X[i, j]
                    B[j, k] = new
            if gamma > 0.0 and K > 1:
                qa = 0.0
                qb = 0.0
                for k in range(K):
                    qa += colsq[j, k]
                    for i in range(offsets[k], offsets[k + 1]):
                        qb += X[i, j] * r[i]
                if qa > 0.0:
                    shift = _row_shift(qa, qb, lam, B[j, :].copy())
                    if shift != 0.0:
                        for k in range(K):
                            B[j, k] += shift
                            for i in range(offsets[k], offsets[k + 1]):
                                r[i] -= shift * X[i, j]
        new_obj = _fused_l2_obj(r, B, lam, gamma, tau)
        trace[it + 1] = new_obj
        if not np.isfinite(new_obj):
            return it + 1, False
        if abs(new_obj - obj) / max(1.0, abs(obj)) < tol:
            return it + 1, True
        obj = new_obj
    return max_iter, False


@njit(cache=True, nogil=True)
def _l1_true_obj(XtX, Xty, yty, C, Bm):
    p, K = Bm.shape
    rss = yty
    for k in range(K):
        for j in range(p):
            s = 0.0
            for l in range(p):
                s += XtX[k, j, l] * Bm[l, k]
            rss += Bm[j, k] * (s - 2.0 * Xty[j, k])
    if rss < 0.0:
        rss = 0.0
    BC = Bm @ C
    return rss + np.abs(BC).sum()


@njit(cache=True, nogil=True)
def accelerated_l1(XtX, Xty, yty, C, mu, L, W0, max_iter, tol, check_every, trace, best_B):
    """Accelerated gradient on the smoothed l1-fusion objective.

    ``XtX`` is (K, p, p), ``Xty`` is (p, K).  Writes the running best true
    objective into ``trace`` and the best iterate into ``best_B``; returns
    (iterations, converged, trace length).
    """
    p, K = W0.shape
    CT = np.ascontiguousarray(C.T)
    W = W0.copy()
    acc = np.zeros((p, K))
    G = np.empty((p, K))
    Bi = np.empty((p, K))
    best = _l1_true_obj(XtX, Xty, yty, C, W0)
    prev = best
    best_B[:, :] = W0
    trace[0] = best
    m = 1
    it = 0
    for it in range(1, max_iter + 1):
        i = it - 1
        A = W @ C / mu
        for a in range(A.shape[0]):
            for b in range(A.shape[1]):
                if A[a, b] > 1.0:
                    A[a, b] = 1.0
                elif A[a, b] < -1.0:
                    A[a, b] = -1.0
        G[:, :] = A @ CT
        for k in range(K):
            for j in range(p):
                s = 0.0
                for l in range(p):
                    s += XtX[k, j, l] * W[l, k]
                G[j, k] += 2.0 * (s - Xty[j, k])
        c1 = (i + 1) / (i + 3)
        c2 = 2.0 / (i + 3)
        finite = True
        for j in range(p):
            for k in range(K):
                Bi[j, k] = W[j, k] - G[j, k] / L
                acc[j, k] += 0.5 * (i + 1) * G[j, k]
                W[j, k] = c1 * Bi[j, k] + c2 * (W0[j, k] - acc[j, k] / L)
                if not np.isfinite(Bi[j, k]):
                    finite = False
        if not finite:
            return it, False, -1
        if it % check_every:
            continue
        f = _l1_true_obj(XtX, Xty, yty, C, Bi)
        if f < best:
            best = f
            best_B[:, :] = Bi
        trace[m] = best
        m += 1
        if abs(f - prev) / max(1.0, abs(prev)) < tol:
            return it, True, m
        prev = f
    return it, False, m
