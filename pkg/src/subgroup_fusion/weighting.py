"""Fusion weights from covariate similarity between subgroups.

Both data-driven schemes turn a pairwise distance ``d`` into
``tau = 1 - d / d_max``, so the closest pair fuses fully and the most
distant pair not at all.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy import linalg

from .core import FusionError, FusionWeights, GroupedDataset, ValidationError


@dataclass(frozen=True)
class GroupGaussianModel:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def p(self) -> int:
        return self.mean.shape[0]


def global_standardize(data: GroupedDataset) -> GroupedDataset:
    """Z-score covariates using the pooled mean and sd of all groups."""
    X, _, _ = data.stacked()
    m = X.mean(axis=0)
    s = X.std(axis=0, ddof=1) if X.shape[0] > 1 else np.ones(X.shape[1])
    s = np.where(s > 0, s, 1.0)
    return GroupedDataset(((g.group_id, (g.X - m) / s, g.y) for g in data), data.feature_names)


def tau_from_distances(d, group_ids=None) -> FusionWeights:
    d = np.asarray(d, dtype=float)
    if d.shape[0] < 2:
        raise ValidationError("fusion weights need at least two groups")
    d_max = d.max()
    if d_max <= 0:
        tau = np.ones_like(d)
    else:
        tau = 1.0 - d / d_max
    np.fill_diagonal(tau, 0.0)
    return FusionWeights(np.clip(tau, 0.0, 1.0), group_ids)


def mean_distances(data: GroupedDataset, standardize: bool = True) -> np.ndarray:
    if standardize:
        data = global_standardize(data)
    means = np.array([g.X.mean(axis=0) for g in data])
    diff = means[:, None, :] - means[None, :, :]
    return np.sqrt(np.sum(diff ** 2, axis=-1))


def tau_mean_distance(data: GroupedDataset, standardize: bool = True) -> FusionWeights:
    """Weights from Euclidean distances between group covariate means."""
    if data.K < 2:
        raise ValidationError("fusion weights need at least two groups")
    return tau_from_distances(mean_distances(data, standardize), data.group_ids)


def fit_gaussian(X, alpha: float) -> GroupGaussianModel:
    """Sample mean and ridge-regularized sample covariance ``S + alpha * I``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] < 2:
        raise ValidationError("need at least two samples to estimate a covariance")
    S = np.atleast_2d(np.cov(X, rowvar=False, ddof=1))
    return GroupGaussianModel(X.mean(axis=0), S + alpha * np.eye(X.shape[1]))


def gaussian_kl(a: GroupGaussianModel, b: GroupGaussianModel) -> float:
    """KL(N(a) || N(b)) in closed form, via Cholesky factors."""
    La = linalg.cholesky(a.cov, lower=True)
    Lb = linalg.cholesky(b.cov, lower=True)
    logdet_a = 2.0 * np.log(np.diag(La)).sum()
    logdet_b = 2.0 * np.log(np.diag(Lb)).sum()
    M = linalg.solve_triangular(Lb, La, lower=True)
    trace = float(np.sum(M * M))
    z = linalg.solve_triangular(Lb, b.mean - a.mean, lower=True)
    return 0.5 * (trace + float(z @ z) - a.p + logdet_b - logdet_a)


def symmetrized_kl(a: GroupGaussianModel, b: GroupGaussianModel) -> float:
    return 0.5 * (gaussian_kl(a, b) + gaussian_kl(b, a))


def kl_distance_matrix(models: list[GroupGaussianModel]) -> np.ndarray:
    K = len(models)
    d = np.zeros((K, K))
    for k in range(K):
        for kp in range(k + 1, K):
            try:
                v = symmetrized_kl(models[k], models[kp])
            except (ValueError, linalg.LinAlgError):
                v = np.nan
            if not np.isfinite(v):
                raise FusionError(f"non-finite KL divergence between groups {k} and {kp}")
            d[k, kp] = d[kp, k] = max(v, 0.0)
    return d


def group_models(data: GroupedDataset, alpha: float = 0.1,
                 standardize: bool = True) -> list[GroupGaussianModel]:
    if standardize:
        data = global_standardize(data)
    return [fit_gaussian(g.X, alpha) for g in data]


def tau_symmetrized_kl(data: GroupedDataset, alpha: float = 0.1,
                       standardize: bool = True) -> FusionWeights:
    """Weights from symmetrized KL divergences between per-group Gaussian fits."""
    if data.K < 2:
        raise ValidationError("fusion weights need at least two groups")
    if not alpha > 0:
        raise ValidationError("alpha must be > 0")
    models = group_models(data, alpha, standardize)
    return tau_from_distances(kl_distance_matrix(models), data.group_ids)


def tau_manual(group_ids, entries: Iterable[tuple[str, str, float]] = (),
               as_distances: bool = False) -> FusionWeights:
    """Explicit pairwise weights; unspecified pairs default to full fusion.

    With ``as_distances`` the values are distances (unspecified pairs 0) and
    are converted with ``1 - d / d_max``.
    """
    group_ids = [str(g) for g in group_ids]
    K = len(group_ids)
    index = {g: i for i, g in enumerate(group_ids)}
    default = 0.0 if as_distances else 1.0
    M = np.full((K, K), default)
    np.fill_diagonal(M, 0.0)
    seen = set()
    for a, b, v in entries:
        a, b, v = str(a), str(b), float(v)
        for g in (a, b):
            if g not in index:
                raise ValidationError(f"unknown group {g!r}")
        if a == b:
            raise ValidationError(f"pair ({a}, {b}) is not between distinct groups")
        key = frozenset((a, b))
        if key in seen:
            raise ValidationError(f"duplicate pair ({a}, {b})")
        seen.add(key)
        if as_distances:
            if not (np.isfinite(v) and v >= 0):
                raise ValidationError(f"distance for ({a}, {b}) must be >= 0, got {v}")
        elif not 0.0 <= v <= 1.0:
            raise ValidationError(f"weight for ({a}, {b}) must lie in [0, 1], got {v}")
        M[index[a], index[b]] = M[index[b], index[a]] = v
    if as_distances:
        return tau_from_distances(M, group_ids)
    return FusionWeights(M, group_ids)
