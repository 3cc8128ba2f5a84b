"""Classical lasso engine and the pooled / subgroup-wise comparison fits."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import _kernels
from .core import (
    DivergenceError,
    FitResult,
    GroupedDataset,
    SolverOptions,
    ValidationError,
)


@dataclass(frozen=True)
class LassoProblem:
    """``min_b ||y - X b||_2^2 + lam * ||b||_1``; ``X`` may be a scipy sparse matrix."""

    X: object
    y: np.ndarray
    lam: float

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        object.__setattr__(self, "y", y)
        if self.X.shape[0] != y.shape[0]:
            raise ValidationError(f"X has {self.X.shape[0]} rows, y has {y.shape[0]}")
        if not self.lam >= 0:
            raise ValidationError(f"lambda must be >= 0, got {self.lam}")

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def objective(self, beta) -> float:
        r = self.y - self.X @ beta
        return float(r @ r + self.lam * np.abs(beta).sum())


def lasso_cd(problem: LassoProblem, opts: SolverOptions = SolverOptions(),
             beta_init=None) -> FitResult:
    """Cyclic coordinate descent with residual maintenance.

    The returned ``B`` is the coefficient vector of length ``p``.
    """
    beta = np.zeros(problem.p) if beta_init is None else np.array(beta_init, dtype=float).ravel()
    if beta.shape != (problem.p,):
        raise ValidationError(f"beta_init has length {beta.shape[0]}, expected {problem.p}")
    trace = np.full(opts.max_iter + 1, np.nan)
    if sparse.issparse(problem.X):
        Xc = sparse.csc_matrix(problem.X, dtype=float)
        Xc.sort_indices()
        it, conv = _kernels.lasso_csc(
            Xc.indptr.astype(np.int64), Xc.indices.astype(np.int64), Xc.data,
            Xc.shape[0], problem.y, beta, float(problem.lam), opts.max_iter, opts.tol, trace)
    else:
        X = np.asfortranarray(problem.X, dtype=float)
        it, conv = _kernels.lasso_dense(X, problem.y, beta, float(problem.lam),
                                        opts.max_iter, opts.tol, trace)
    trace = trace[: it + 1]
    if not (np.all(np.isfinite(beta)) and np.isfinite(trace[-1])):
        raise DivergenceError("lasso coordinate descent diverged")
    return FitResult(beta, trace, int(it), bool(conv))


def lambda_max(X, y) -> float:
    """Smallest lambda for which the lasso solution is exactly zero."""
    return float(2.0 * np.max(np.abs(X.T @ y)))


def lasso_path(X, y, lambdas, opts: SolverOptions = SolverOptions()) -> list[FitResult]:
    """Warm-started fits along ``lambdas`` (processed largest first)."""
    order = np.argsort(-np.asarray(lambdas, dtype=float), kind="stable")
    out: list[FitResult | None] = [None] * len(order)
    beta = None
    for i in order:
        res = lasso_cd(LassoProblem(X, y, float(lambdas[i])), opts, beta)
        beta = res.B
        out[i] = res
    return out


def fit_pooled(data: GroupedDataset, lam: float, opts: SolverOptions = SolverOptions(),
               beta_init=None) -> FitResult:
    """One lasso on all groups stacked; the solution is copied into every column."""
    X, y, _ = data.stacked()
    if beta_init is not None:
        beta_init = np.asarray(beta_init, dtype=float)
        if beta_init.ndim == 2:
            beta_init = beta_init[:, 0]
    res = lasso_cd(LassoProblem(X, y, lam), opts, beta_init)
    B = np.repeat(res.B[:, None], data.K, axis=1)
    return FitResult(B, res.objective_trace, res.iterations, res.converged)


def fit_subgroupwise(data: GroupedDataset, lam: float, opts: SolverOptions = SolverOptions(),
                     B_init=None) -> FitResult:
    """Independent lasso per group with a shared lambda.

    The objective trace is the sum of the per-group traces, padded with each
    group's final value where it converged early.
    """
    B = np.zeros((data.p, data.K))
    traces, its, conv = [], [], True
    for k, g in enumerate(data):
        init = None if B_init is None else np.asarray(B_init, dtype=float)[:, k]
        res = lasso_cd(LassoProblem(g.X, g.y, lam), opts, init)
        B[:, k] = res.B
        traces.append(res.objective_trace)
        its.append(res.iterations)
        conv = conv and res.converged
    length = max(len(t) for t in traces)
    total = sum(np.pad(t, (0, length - len(t)), mode="edge") for t in traces)
    return FitResult(B, total, int(max(its)), conv)
