"""Independent reference computations used by the tests."""
import itertools

import numpy as np
from scipy import integrate, stats


def pattern_search(f, x0, step=1.0, min_step=1e-10, max_evals=2_000_000):
    """Derivative-free compass search over all directions in {-1, 0, 1}^d.

    Including diagonal directions lets it slide along the kinks of
    ``|b_i|`` and ``|b_i - b_j|`` terms.
    """
    x = np.array(x0, dtype=float)
    fx = f(x)
    dirs = [np.array(d, dtype=float) for d in itertools.product((-1, 0, 1), repeat=x.size)
            if any(d)]
    evals = 0
    while step > min_step and evals < max_evals:
        improved = False
        for d in dirs:
            cand = x + step * d
            fc = f(cand)
            evals += 1
            if fc < fx:
                x, fx, improved = cand, fc, True
                break
        if not improved:
            step /= 2
    return x, fx


def central_gradient(f, B, h=1e-5):
    G = np.zeros_like(B)
    for idx in np.ndindex(B.shape):
        e = np.zeros_like(B)
        e[idx] = h
        G[idx] = (f(B + e) - f(B - e)) / (2 * h)
    return G


def kl_quadrature(m1, v1, m2, v2):
    """KL(N(m1, v1) || N(m2, v2)) by numerical integration."""
    p = stats.norm(m1, np.sqrt(v1))
    q = stats.norm(m2, np.sqrt(v2))
    lo, hi = m1 - 40 * np.sqrt(v1), m1 + 40 * np.sqrt(v1)
    val, _ = integrate.quad(lambda x: p.pdf(x) * (p.logpdf(x) - q.logpdf(x)), lo, hi,
                            limit=500, epsabs=1e-12, epsrel=1e-10)
    return val


def brute_force_subset(cost, K, K0):
    best, best_c = None, np.inf
    for mask in range(1 << K):
        members = [k for k in range(K) if mask >> k & 1]
        if len(members) != K0:
            continue
        c = cost(members)
        if c < best_c - 1e-15 or (abs(c - best_c) <= 1e-15 and members < best):
            best, best_c = members, c
    return frozenset(best)
