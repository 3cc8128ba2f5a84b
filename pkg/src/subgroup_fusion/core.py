"""Domain types, per-subgroup standardization and the two fused objectives.

Data are held as a :class:`GroupedDataset`: an ordered collection of
``(group_id, X_k, y_k)`` triples sharing the same covariates.  Coefficients
live in a ``p x K`` array whose column ``k`` belongs to group ``k``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class FusionError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(FusionError, ValueError):
    """Inputs violate a documented precondition."""


class DivergenceError(FusionError, FloatingPointError):
    """A solver produced non-finite values."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Group:
    group_id: str
    X: np.ndarray
    y: np.ndarray

    @property
    def n(self) -> int:
        return self.X.shape[0]


class GroupedDataset:
    """Per-subgroup design matrices and responses over a shared covariate set.

    Parameters
    ----------
    groups : iterable of (group_id, X_k, y_k)
        Iteration order is preserved and defines the column order of any
        coefficient matrix fitted to the data.
    feature_names : sequence of str, optional
        Defaults to ``x0, x1, ...``.
    """

    def __init__(self, groups: Iterable[tuple[str, np.ndarray, np.ndarray]],
                 feature_names: Sequence[str] | None = None):
        built = []
        seen = set()
        p = None
        for gid, X, y in groups:
            gid = str(gid)
            if gid in seen:
                raise ValidationError(f"duplicate group id {gid!r}")
            seen.add(gid)
            X = np.atleast_2d(np.asarray(X, dtype=float))
            y = np.asarray(y, dtype=float).ravel()
            if X.shape[0] != y.shape[0]:
                raise ValidationError(
                    f"group {gid!r}: X has {X.shape[0]} rows but y has {y.shape[0]}")
            if X.shape[0] < 1:
                raise ValidationError(f"group {gid!r} has no samples")
            if p is None:
                p = X.shape[1]
            elif X.shape[1] != p:
                raise ValidationError(
                    f"group {gid!r} has {X.shape[1]} covariates, expected {p}")
            built.append(Group(gid, _frozen(X), _frozen(y)))
        if not built:
            raise ValidationError("dataset needs at least one group")
        self.groups: tuple[Group, ...] = tuple(built)
        if feature_names is None:
            feature_names = [f"x{j}" for j in range(p)]
        if len(feature_names) != p:
            raise ValidationError("feature_names length does not match p")
        self.feature_names: tuple[str, ...] = tuple(str(f) for f in feature_names)

    @property
    def p(self) -> int:
        return self.groups[0].X.shape[1]

    @property
    def K(self) -> int:
        return len(self.groups)

    @property
    def n_k(self) -> np.ndarray:
        return np.array([g.n for g in self.groups], dtype=np.int64)

    @property
    def n(self) -> int:
        return int(self.n_k.sum())

    @property
    def group_ids(self) -> tuple[str, ...]:
        return tuple(g.group_id for g in self.groups)

    def index_of(self, group_id: str) -> int:
        for k, g in enumerate(self.groups):
            if g.group_id == group_id:
                return k
        raise ValidationError(f"unknown group id {group_id!r}")

    def __iter__(self):
        return iter(self.groups)

    def __len__(self):
        return self.K

    def __repr__(self):
        return f"GroupedDataset(K={self.K}, p={self.p}, n_k={self.n_k.tolist()})"

    def stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Rows of all groups stacked in group order, plus row offsets.

        ``offsets[k]:offsets[k + 1]`` indexes the rows of group ``k``.
        """
        X = np.vstack([g.X for g in self.groups])
        y = np.concatenate([g.y for g in self.groups])
        offsets = np.concatenate([[0], np.cumsum(self.n_k)]).astype(np.int64)
        return X, y, offsets

    def subset_rows(self, rows: Sequence[np.ndarray]) -> "GroupedDataset":
        """New dataset keeping ``rows[k]`` (integer indices) of each group."""
        return GroupedDataset(
            ((g.group_id, g.X[idx], g.y[idx]) for g, idx in zip(self.groups, rows)),
            self.feature_names)

    def reordered(self, order: Sequence[int]) -> "GroupedDataset":
        return GroupedDataset(
            ((self.groups[k].group_id, self.groups[k].X, self.groups[k].y) for k in order),
            self.feature_names)


class FusionNorm(str, enum.Enum):
    L2 = "L2"
    L1 = "L1"


@dataclass(frozen=True)
class PenaltyConfig:
    """Penalty strengths. ``lam`` is the l1 weight, ``gamma`` the fusion weight."""

    lam: float
    gamma: float = 0.0
    fusion_norm: FusionNorm = FusionNorm.L2
    epsilon: float = 1e-3

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ValidationError(f"lambda must be >= 0, got {self.lam}")
        if not (np.isfinite(self.gamma) and self.gamma >= 0):
            raise ValidationError(f"gamma must be >= 0, got {self.gamma}")
        if not self.epsilon > 0:
            raise ValidationError(f"epsilon must be > 0, got {self.epsilon}")
        object.__setattr__(self, "fusion_norm", FusionNorm(self.fusion_norm))


@dataclass(frozen=True)
class SolverOptions:
    max_iter: int = 1000
    tol: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValidationError("max_iter must be >= 1")
        if not self.tol > 0:
            raise ValidationError("tol must be > 0")


@dataclass
class FitResult:
    B: np.ndarray
    objective_trace: np.ndarray
    iterations: int
    converged: bool
    info: dict = field(default_factory=dict)

    @property
    def objective(self) -> float:
        return float(self.objective_trace[-1])


class FusionWeights:
    """Symmetric K x K matrix of pairwise fusion strengths in [0, 1]."""

    def __init__(self, tau, group_ids: Sequence[str] | None = None):
        tau = np.array(tau, dtype=float)
        if tau.ndim != 2 or tau.shape[0] != tau.shape[1]:
            raise ValidationError(f"tau must be square, got shape {tau.shape}")
        if not np.all(np.isfinite(tau)):
            raise ValidationError("tau has non-finite entries")
        if not np.allclose(tau, tau.T, atol=1e-12):
            raise ValidationError("tau must be symmetric")
        if np.any(np.diag(tau) != 0):
            raise ValidationError("tau must have a zero diagonal")
        if tau.min() < 0 or tau.max() > 1:
            raise ValidationError("tau entries must lie in [0, 1]")
        tau = 0.5 * (tau + tau.T)
        tau.setflags(write=False)
        self.tau = tau
        if group_ids is not None and len(group_ids) != tau.shape[0]:
            raise ValidationError("group_ids length does not match tau")
        self.group_ids = tuple(group_ids) if group_ids is not None else None

    @classmethod
    def uniform(cls, K: int, group_ids=None) -> "FusionWeights":
        return cls(np.ones((K, K)) - np.eye(K), group_ids)

    @property
    def K(self) -> int:
        return self.tau.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.tau, dtype=dtype)

    def __repr__(self):
        return f"FusionWeights(K={self.K})"


def as_tau(tau, K: int) -> np.ndarray:
    """Normalize ``None`` / FusionWeights / array into a validated K x K array."""
    if tau is None:
        return np.ones((K, K)) - np.eye(K)
    if not isinstance(tau, FusionWeights):
        tau = FusionWeights(tau)
    if tau.K != K:
        raise ValidationError(f"tau is {tau.K}x{tau.K} but data has K={K}")
    return np.asarray(tau.tau)


def check_coefficients(data: GroupedDataset, B) -> np.ndarray:
    B = np.asarray(B, dtype=float)
    if B.shape != (data.p, data.K):
        raise ValidationError(f"B has shape {B.shape}, expected {(data.p, data.K)}")
    if not np.all(np.isfinite(B)):
        raise ValidationError("B has non-finite entries")
    return B


# --- standardization -------------------------------------------------------

@dataclass(frozen=True)
class GroupScaling:
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    y_scale: float


@dataclass(frozen=True)
class StandardizationRecord:
    """Per-group location/scale used to map between raw and standardized units."""

    group_ids: tuple[str, ...]
    scalings: tuple[GroupScaling, ...]

    def scaling(self, group_id: str) -> GroupScaling:
        try:
            return self.scalings[self.group_ids.index(group_id)]
        except ValueError:
            raise ValidationError(f"unknown group id {group_id!r}") from None

    def transform(self, data: GroupedDataset) -> GroupedDataset:
        """Apply the recorded scaling to (possibly new) raw data."""
        out = []
        for g in data:
            s = self.scaling(g.group_id)
            out.append((g.group_id, (g.X - s.x_mean) / s.x_scale, (g.y - s.y_mean) / s.y_scale))
        return GroupedDataset(out, data.feature_names)

    def coefficients_raw(self, B, group_ids: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        """Raw-unit slopes and intercepts for standardized coefficients ``B``."""
        B = np.asarray(B, dtype=float)
        slopes = np.empty_like(B)
        intercepts = np.empty(B.shape[1])
        for k, gid in enumerate(group_ids):
            s = self.scaling(gid)
            slopes[:, k] = s.y_scale * B[:, k] / s.x_scale
            intercepts[k] = s.y_mean - slopes[:, k] @ s.x_mean
        return slopes, intercepts


def _scale(v: np.ndarray, axis=0) -> np.ndarray:
    sd = np.std(v, axis=axis, ddof=1)
    # columns that are constant up to rounding keep unit scale
    ref = np.max(np.abs(v), axis=axis)
    const = sd <= 1e-12 * np.maximum(ref, 1.0)
    return np.where(const, 1.0, sd)


def standardize_by_group(data: GroupedDataset) -> tuple[GroupedDataset, StandardizationRecord]:
    """Center and scale every covariate and the response within each group.

    Uses the unbiased (n - 1) standard deviation.  Constant columns are
    centered but left unscaled (scale recorded as 1).
    """
    out, scalings = [], []
    for g in data:
        if g.n < 2:
            raise ValidationError(
                f"insufficient samples for standardization in group {g.group_id!r} (n={g.n})")
        xm = g.X.mean(axis=0)
        xs = _scale(g.X)
        ym = float(g.y.mean())
        ys = float(_scale(g.y))
        scalings.append(GroupScaling(_frozen(xm), _frozen(xs), ym, ys))
        out.append((g.group_id, (g.X - xm) / xs, (g.y - ym) / ys))
    record = StandardizationRecord(data.group_ids, tuple(scalings))
    return GroupedDataset(out, data.feature_names), record


# --- primitives and objectives --------------------------------------------

def soft_threshold(z, t):
    """``sign(z) * max(|z| - t, 0)``; works elementwise on arrays."""
    if np.any(np.asarray(t) < 0):
        raise ValidationError("threshold must be nonnegative")
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def residual_sum_of_squares(data: GroupedDataset, B) -> float:
    B = check_coefficients(data, B)
    return float(sum(np.sum((g.y - g.X @ B[:, k]) ** 2) for k, g in enumerate(data)))


def fusion_penalty(B, tau, norm: FusionNorm | str = FusionNorm.L2) -> float:
    """``sum_{k<k'} tau[k, k'] * ||b_k - b_k'||`` (squared l2, or l1)."""
    B = np.asarray(B, dtype=float)
    tau = np.asarray(tau, dtype=float)
    K = B.shape[1]
    total = 0.0
    for k in range(K):
        for kp in range(k + 1, K):
            if tau[k, kp] == 0:
                continue
            d = B[:, k] - B[:, kp]
            if FusionNorm(norm) is FusionNorm.L2:
                total += tau[k, kp] * float(d @ d)
            else:
                total += tau[k, kp] * float(np.abs(d).sum())
    return total


def _objective(data, B, config, tau, norm):
    B = check_coefficients(data, B)
    tau = as_tau(tau, data.K)
    return (residual_sum_of_squares(data, B) + config.lam * float(np.abs(B).sum())
            + config.gamma * fusion_penalty(B, tau, norm))


def objective_l2(data: GroupedDataset, B, config: PenaltyConfig, tau=None) -> float:
    """Least squares + lasso + squared-l2 fusion, summed over groups."""
    return _objective(data, B, config, tau, FusionNorm.L2)


def objective_l1(data: GroupedDataset, B, config: PenaltyConfig, tau=None) -> float:
    """As :func:`objective_l2` with an l1 fusion term."""
    return _objective(data, B, config, tau, FusionNorm.L1)


def objective(data, B, config: PenaltyConfig, tau=None) -> float:
    if config.fusion_norm is FusionNorm.L2:
        return objective_l2(data, B, config, tau)
    return objective_l1(data, B, config, tau)


def predict(data: GroupedDataset, B, record: StandardizationRecord) -> dict[str, np.ndarray]:
    """Per-group fitted values for standardized ``data``, in raw response units."""
    B = check_coefficients(data, B)
    out = {}
    for k, g in enumerate(data):
        s = record.scaling(g.group_id)
        out[g.group_id] = s.y_mean + s.y_scale * (g.X @ B[:, k])
    return out


def predict_raw(raw: GroupedDataset, B, record: StandardizationRecord) -> dict[str, np.ndarray]:
    """Predictions for raw (unstandardized) covariates using a training record."""
    return predict(record.transform(raw), B, record)


def relative_change(new: float, old: float) -> float:
    return abs(new - old) / max(1.0, abs(old))
