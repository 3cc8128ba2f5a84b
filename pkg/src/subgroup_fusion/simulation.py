"""Synthetic grouped regression data with a block of groups sharing coefficients.

Per group ``k`` covariates are drawn from ``N(mu_k, Sigma_k)``.  The ``K0``
groups whose covariate models are mutually closest in symmetrized KL share
one coefficient vector; every other group gets its own draw.  Each draw is
sparse (Bernoulli support) with nonzeros from a standard normal truncated
away from zero.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import GroupedDataset, ValidationError
from .weighting import GroupGaussianModel, symmetrized_kl

MAX_EXHAUSTIVE_K = 12


def default_proportions(K: int) -> np.ndarray:
    """Skewed group proportions: one large group, the rest tapering off."""
    if K == 1:
        return np.ones(1)
    w = np.concatenate([[3.0], np.linspace(1.2, 0.6, K - 1)])
    return w / w.sum()


@dataclass(frozen=True)
class SimulationConfig:
    K: int = 9
    K0: int = 4
    p: int = 200
    n_total: int = 250
    group_proportions: tuple[float, ...] | None = None
    sparsity: float = 0.1
    trunc_halfwidth: float = 0.1
    noise_sd: float = 1.0
    seed: int = 0
    group_models: tuple[GroupGaussianModel, ...] | None = None

    def __post_init__(self):
        if self.K < 1:
            raise ValidationError("K must be >= 1")
        if not 1 <= self.K0 <= self.K:
            raise ValidationError(f"K0 must lie in [1, K={self.K}], got {self.K0}")
        if self.p < 1:
            raise ValidationError("p must be >= 1")
        if not 0 < self.sparsity <= 1:
            raise ValidationError("sparsity must lie in (0, 1]")
        if self.trunc_halfwidth < 0:
            raise ValidationError("trunc_halfwidth must be >= 0")
        if self.noise_sd < 0:
            raise ValidationError("noise_sd must be >= 0")
        props = self.proportions
        if props.shape != (self.K,) or np.any(props < 0):
            raise ValidationError("group_proportions must be K nonnegative values")
        if abs(props.sum() - 1.0) > 1e-8:
            raise ValidationError(f"group_proportions sum to {props.sum()}, not 1")
        if np.any(self.group_sizes < 2):
            raise ValidationError(f"every group needs >= 2 samples, got {self.group_sizes.tolist()}")
        if self.group_models is not None and len(self.group_models) != self.K:
            raise ValidationError("group_models must have one entry per group")

    @property
    def proportions(self) -> np.ndarray:
        if self.group_proportions is None:
            return default_proportions(self.K)
        return np.asarray(self.group_proportions, dtype=float)

    @property
    def group_sizes(self) -> np.ndarray:
        return largest_remainder(self.proportions, self.n_total)

    def group_ids(self) -> list[str]:
        return [f"g{k}" for k in range(self.K)]


@dataclass(frozen=True)
class GroundTruth:
    B_true: np.ndarray
    V0: frozenset
    active_sets: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "active_sets", self.B_true != 0)


def largest_remainder(proportions, total: int) -> np.ndarray:
    """Integer sizes proportional to ``proportions`` that sum exactly to ``total``."""
    raw = np.asarray(proportions, dtype=float) * total
    sizes = np.floor(raw).astype(np.int64)
    short = total - int(sizes.sum())
    order = np.argsort(-(raw - sizes), kind="stable")
    sizes[order[:short]] += 1
    return sizes


def _stream(seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, path)]))


# named sub-streams so each component draws independently of the others
MODELS, COVARIATES, COEFFICIENTS, NOISE = 0, 1, 2, 3


def synthetic_group_models(K: int, p: int, rng) -> list[GroupGaussianModel]:
    """Means ~ N(0, 0.5 I); covariances W W'/p + 0.1 I with W standard normal."""
    rng = np.random.default_rng(rng)
    models = []
    for _ in range(K):
        mean = rng.normal(0.0, np.sqrt(0.5), size=p)
        W = rng.standard_normal((p, p))
        models.append(GroupGaussianModel(mean, W @ W.T / p + 0.1 * np.eye(p)))
    return models


def resolve_group_models(config: SimulationConfig) -> list[GroupGaussianModel]:
    if config.group_models is not None:
        return list(config.group_models)
    return synthetic_group_models(config.K, config.p, _stream(config.seed, MODELS))


def generate_covariates(config: SimulationConfig, models=None) -> list[np.ndarray]:
    """One design matrix per group with ``group_sizes[k]`` rows from its model."""
    models = resolve_group_models(config) if models is None else models
    rng = _stream(config.seed, COVARIATES)
    out = []
    for n_k, m in zip(config.group_sizes, models):
        L = np.linalg.cholesky(m.cov)
        out.append(m.mean + rng.standard_normal((int(n_k), m.p)) @ L.T)
    return out


def _subset_cost(subset, d) -> float:
    return sum(d[a, b] for a, b in itertools.combinations(subset, 2))


def select_shared_subset(models: Sequence[GroupGaussianModel], K0: int) -> frozenset:
    """Size-``K0`` subset minimizing the summed pairwise symmetrized KL.

    Exhaustive over all subsets; ties go to the lexicographically smallest.
    ``K0 == 1`` returns ``{0}``.
    """
    K = len(models)
    if not 1 <= K0 <= K:
        raise ValidationError(f"K0 must lie in [1, {K}], got {K0}")
    if K > MAX_EXHAUSTIVE_K:
        raise ValidationError(f"exhaustive subset search limited to K <= {MAX_EXHAUSTIVE_K}")
    if K0 == 1:
        return frozenset({0})
    if K0 == K:
        return frozenset(range(K))
    d = np.zeros((K, K))
    for a, b in itertools.combinations(range(K), 2):
        d[a, b] = d[b, a] = symmetrized_kl(models[a], models[b])
    best, best_cost = None, np.inf
    for subset in itertools.combinations(range(K), K0):
        cost = _subset_cost(subset, d)
        if cost < best_cost:
            best, best_cost = subset, cost
    return frozenset(best)


def draw_sparse_vector(p: int, rng, sparsity: float = 0.1, halfwidth: float = 0.1) -> np.ndarray:
    """Bernoulli(sparsity) support; nonzeros standard normal with |b| >= halfwidth."""
    support = rng.random(p) < sparsity
    beta = np.zeros(p)
    for j in np.flatnonzero(support):
        v = rng.standard_normal()
        while abs(v) < halfwidth:
            v = rng.standard_normal()
        beta[j] = v
    return beta


def draw_coefficients(config: SimulationConfig, V0, rng=None) -> GroundTruth:
    rng = _stream(config.seed, COEFFICIENTS) if rng is None else np.random.default_rng(rng)
    V0 = frozenset(int(v) for v in V0)
    if not V0 or max(V0) >= config.K or min(V0) < 0:
        raise ValidationError(f"invalid shared subset {sorted(V0)}")
    B = np.zeros((config.p, config.K))
    shared = draw_sparse_vector(config.p, rng, config.sparsity, config.trunc_halfwidth)
    for k in range(config.K):
        if k in V0:
            B[:, k] = shared
        else:
            B[:, k] = draw_sparse_vector(config.p, rng, config.sparsity, config.trunc_halfwidth)
    return GroundTruth(B, V0)


def generate_responses(X: Sequence[np.ndarray], truth: GroundTruth, noise_sd: float,
                       seed=0, group_ids=None, feature_names=None) -> GroupedDataset:
    """``y_k = X_k b_k + noise``, noise i.i.d. ``N(0, noise_sd^2)``."""
    rng = _stream(seed, NOISE) if isinstance(seed, (int, np.integer)) else np.random.default_rng(seed)
    if group_ids is None:
        group_ids = [f"g{k}" for k in range(len(X))]
    groups = []
    for k, (gid, Xk) in enumerate(zip(group_ids, X)):
        y = Xk @ truth.B_true[:, k]
        if noise_sd > 0:
            y = y + noise_sd * rng.standard_normal(Xk.shape[0])
        groups.append((gid, Xk, y))
    return GroupedDataset(groups, feature_names)


@dataclass(frozen=True)
class SimulatedData:
    data: GroupedDataset
    truth: GroundTruth
    models: tuple[GroupGaussianModel, ...]


def simulate(config: SimulationConfig) -> SimulatedData:
    """Full draw: group models, shared subset, coefficients, covariates, responses."""
    models = resolve_group_models(config)
    V0 = select_shared_subset(models, config.K0)
    truth = draw_coefficients(config, V0)
    X = generate_covariates(config, models)
    data = generate_responses(X, truth, config.noise_sd, config.seed, config.group_ids())
    return SimulatedData(data, truth, tuple(models))
