"""Solvers for the squared-l2 fusion objective.

Two routes to the same minimizer:

* :func:`fit_cd` -- block coordinate descent over covariates, each row of
  ``B`` updated group by group with the exact coordinate minimizer followed
  by soft-thresholding.
* :func:`fit_augmented` -- the problem rewritten as one classical lasso on a
  block-diagonal design stacked over a pairwise-difference matrix, handed to
  :func:`subgroup_fusion.baselines.lasso_cd`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import _kernels
from .baselines import LassoProblem, lasso_cd
from .core import (
    DivergenceError,
    FitResult,
    FusionNorm,
    GroupedDataset,
    PenaltyConfig,
    SolverOptions,
    ValidationError,
    as_tau,
    check_coefficients,
    objective_l2,
)

# below this many unknowns the augmented design is kept dense
DENSE_LIMIT = 2000


@dataclass(frozen=True)
class CoordinateUpdate:
    value: float
    degenerate: bool = False


def cd_update(data: GroupedDataset, B, j: int, k: int, config: PenaltyConfig,
              tau=None) -> CoordinateUpdate:
    """Unpenalized minimizer of the fused objective in ``B[j, k]``, others fixed.

    ``(x'r_{-j} + gamma * sum_k' tau_kk' B[j, k']) / (x'x + gamma * sum_k' tau_kk')``

    Soft-thresholding the numerator at ``lam / 2`` before dividing gives the
    exact coordinate minimizer including the lasso term (see
    :func:`coordinate_minimizer`).
    """
    num, den = _coordinate_terms(data, B, j, k, config, tau)
    if den <= 0:
        return CoordinateUpdate(0.0, True)
    return CoordinateUpdate(num / den)


def coordinate_minimizer(data, B, j, k, config, tau=None) -> float:
    num, den = _coordinate_terms(data, B, j, k, config, tau)
    if den <= 0:
        return 0.0
    return float(np.sign(num) * max(abs(num) - config.lam / 2, 0.0) / den)


def _coordinate_terms(data, B, j, k, config, tau):
    B = check_coefficients(data, B)
    tau = as_tau(tau, data.K)
    g = data.groups[k]
    x = g.X[:, j]
    partial = g.y - g.X @ B[:, k] + x * B[j, k]
    others = [kp for kp in range(data.K) if kp != k]
    num = x @ partial + config.gamma * sum(tau[k, kp] * B[j, kp] for kp in others)
    den = x @ x + config.gamma * sum(tau[k, kp] for kp in others)
    return float(num), float(den)


def fit_cd(data: GroupedDataset, config: PenaltyConfig, tau=None,
           opts: SolverOptions = SolverOptions(), B_init=None) -> FitResult:
    if config.fusion_norm is not FusionNorm.L2:
        raise ValidationError("fit_cd solves the L2 fusion objective only")
    tau = np.ascontiguousarray(as_tau(tau, data.K))
    B = np.zeros((data.p, data.K)) if B_init is None else np.array(
        check_coefficients(data, B_init), dtype=float)
    X, y, offsets = data.stacked()
    trace = np.full(opts.max_iter + 1, np.nan)
    it, conv = _kernels.fused_l2_cd(np.asfortranarray(X), y, offsets, B,
                                    float(config.lam), float(config.gamma), tau,
                                    opts.max_iter, opts.tol, trace)
    trace = trace[: it + 1]
    if not (np.all(np.isfinite(trace)) and np.all(np.isfinite(B))):
        raise DivergenceError("diverged")
    return FitResult(B, trace, int(it), bool(conv))


@dataclass(frozen=True)
class AugmentedSystem:
    """Stacked design ``[X_diag; Gamma]`` and response ``[y_flat; 0]``.

    Unknowns are ordered group-major: flat index ``k * p + j`` holds
    ``B[j, k]`` (see :meth:`unflatten`).
    """

    X_aug: object
    y_aug: np.ndarray
    p: int
    K: int
    n_data: int
    pairs: tuple[tuple[int, int], ...]

    @property
    def gamma_block(self):
        return self.X_aug[self.n_data:]

    def flat_index(self, j: int, k: int) -> int:
        return k * self.p + j

    def flatten(self, B) -> np.ndarray:
        return np.asarray(B, dtype=float).T.ravel()

    def unflatten(self, b) -> np.ndarray:
        return np.asarray(b, dtype=float).reshape(self.K, self.p).T.copy()


def build_augmented_system(data: GroupedDataset, config: PenaltyConfig, tau=None,
                           dense: bool | None = None) -> AugmentedSystem:
    """Lasso reformulation of the l2-fused problem.

    Rows of the fusion block come in pairs ``(k, k')`` in lexicographic order,
    one row per covariate, with entries ``+-sqrt(gamma * tau_kk')`` so that
    ``||Gamma b||^2`` reproduces the fusion penalty exactly.  Pairs with zero
    weight (or ``gamma == 0``) contribute no rows.
    """
    tau = as_tau(tau, data.K)
    p, K = data.p, data.K
    X_diag = sparse.block_diag([sparse.csr_matrix(g.X) for g in data], format="csr")
    y_flat = np.concatenate([g.y for g in data])
    pairs = []
    rows, cols, vals = [], [], []
    r = 0
    if config.gamma > 0:
        for k in range(K):
            for kp in range(k + 1, K):
                w = config.gamma * tau[k, kp]
                if w <= 0:
                    continue
                pairs.append((k, kp))
                s = np.sqrt(w)
                for m in range(p):
                    rows += [r, r]
                    cols += [k * p + m, kp * p + m]
                    vals += [s, -s]
                    r += 1
    G = sparse.csr_matrix((vals, (rows, cols)), shape=(r, p * K))
    X_aug = sparse.vstack([X_diag, G], format="csc")
    if dense is None:
        dense = p * K <= DENSE_LIMIT
    if dense:
        X_aug = X_aug.toarray()
    y_aug = np.concatenate([y_flat, np.zeros(r)])
    return AugmentedSystem(X_aug, y_aug, p, K, X_diag.shape[0], tuple(pairs))


def fit_augmented(data: GroupedDataset, config: PenaltyConfig, tau=None,
                  opts: SolverOptions = SolverOptions(), B_init=None) -> FitResult:
    if config.fusion_norm is not FusionNorm.L2:
        raise ValidationError("fit_augmented solves the L2 fusion objective only")
    system = build_augmented_system(data, config, tau)
    init = None if B_init is None else system.flatten(check_coefficients(data, B_init))
    res = lasso_cd(LassoProblem(system.X_aug, system.y_aug, config.lam), opts, init)
    B = system.unflatten(res.B)
    # the augmented lasso objective equals the fused objective term for term
    trace = res.objective_trace
    return FitResult(B, trace, res.iterations, res.converged,
                     {"objective_check": objective_l2(data, B, config, tau)})
