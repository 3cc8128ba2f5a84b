"""Metrics, cross-validated tuning and the simulation comparison loop."""
from __future__ import annotations

import csv
import dataclasses
import io
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

from .baselines import fit_pooled, fit_subgroupwise
from .core import (
    FitResult,
    FusionError,
    FusionNorm,
    GroupedDataset,
    PenaltyConfig,
    SolverOptions,
    ValidationError,
    as_tau,
    predict,
    predict_raw,
    standardize_by_group,
)
from .simulation import SimulationConfig, resolve_group_models, simulate
from .solver_l1 import fit_proximal
from .solver_l2 import fit_cd
from .weighting import tau_mean_distance, tau_symmetrized_kl

log = logging.getLogger(__name__)

METHODS = ("fused_l2", "fused_l1", "pooled", "subgroupwise")
FUSED = ("fused_l2", "fused_l1")


# --- metrics ----------------------------------------------------------------

def _as_group_list(x):
    if isinstance(x, dict):
        return list(x.values())
    return list(x)


def group_rmse(predictions, actuals) -> np.ndarray:
    preds, acts = _as_group_list(predictions), _as_group_list(actuals)
    if len(preds) != len(acts) or not preds:
        raise ValidationError("predictions and actuals must cover the same nonempty groups")
    out = []
    for a, b in zip(preds, acts):
        a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
        if a.shape != b.shape:
            raise ValidationError("prediction and response lengths differ")
        if a.size == 0:
            raise ValidationError("empty group")
        out.append(np.sqrt(np.mean((a - b) ** 2)))
    return np.array(out)


def weighted_rmse(predictions, actuals, group_sizes=None) -> float:
    """Per-group RMSE averaged with weights ``n_k / n``."""
    rmse = group_rmse(predictions, actuals)
    if group_sizes is None:
        group_sizes = [len(np.atleast_1d(a)) for a in _as_group_list(actuals)]
    w = np.asarray(group_sizes, dtype=float)
    if w.shape != rmse.shape or np.any(w <= 0):
        raise ValidationError("group_sizes must be positive, one per group")
    return float(np.sum(w / w.sum() * rmse))


def auroc_active(scores, truth) -> float:
    """Area under the ROC curve for recovering the active set.

    All ``(j, k)`` entries are pooled; ties get midranks.
    """
    s = np.abs(np.asarray(scores, dtype=float)).ravel()
    t = np.asarray(truth, dtype=bool).ravel()
    if s.shape != t.shape:
        raise ValidationError("scores and truth differ in shape")
    n_pos = int(t.sum())
    n_neg = t.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("truth needs at least one active and one inactive entry")
    ranks = rankdata(s)
    return float((ranks[t].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


# --- fitting dispatch --------------------------------------------------------

def fit_method(data: GroupedDataset, method: str, lam: float, gamma: float = 0.0, tau=None,
               opts: SolverOptions = SolverOptions(), B_init=None,
               epsilon: float = 1e-3) -> FitResult:
    """Fit one of :data:`METHODS` on already-standardized data."""
    if method == "fused_l2":
        return fit_cd(data, PenaltyConfig(lam, gamma, FusionNorm.L2), tau, opts, B_init)
    if method == "fused_l1":
        return fit_proximal(data, PenaltyConfig(lam, gamma, FusionNorm.L1, epsilon), tau,
                            opts, B_init)
    if method == "pooled":
        return fit_pooled(data, lam, opts, B_init)
    if method == "subgroupwise":
        return fit_subgroupwise(data, lam, opts, B_init)
    raise ValidationError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


def lambda_max_grouped(data: GroupedDataset) -> float:
    """Smallest lambda zeroing every method's solution on ``data``."""
    per_group = max(float(np.max(np.abs(g.X.T @ g.y))) for g in data)
    X, y, _ = data.stacked()
    return 2.0 * max(per_group, float(np.max(np.abs(X.T @ y))))


def default_lambdas(data_std: GroupedDataset, n_lambda: int = 30, ratio: float = 1e-3):
    lmax = lambda_max_grouped(data_std)
    if lmax <= 0:
        lmax = 1.0
    return tuple(np.geomspace(lmax, ratio * lmax, n_lambda))


def default_gammas(data: GroupedDataset, factors=(0.0, 0.01, 0.1, 1.0, 10.0)):
    scale = data.n / data.K
    return tuple(f * scale for f in factors)


# --- cross-validation --------------------------------------------------------

@dataclass(frozen=True)
class CvGrid:
    """Tuning grid.  ``None`` lambda/gamma values are derived from the data."""

    lambda_values: tuple[float, ...] | None = None
    gamma_values: tuple[float, ...] | None = None
    folds: int = 10
    seed: int = 0
    stratify_by_group: bool = True
    n_lambda: int = 30
    lambda_ratio: float = 1e-3

    def __post_init__(self):
        if self.folds < 2:
            raise ValidationError("folds must be >= 2")
        if self.lambda_values is not None:
            lv = tuple(float(v) for v in self.lambda_values)
            if not lv or any(v <= 0 for v in lv):
                raise ValidationError("lambda values must be positive")
            object.__setattr__(self, "lambda_values", tuple(sorted(lv, reverse=True)))
        if self.gamma_values is not None:
            gv = tuple(float(v) for v in self.gamma_values)
            if not gv or any(v < 0 for v in gv):
                raise ValidationError("gamma values must be nonnegative")
            object.__setattr__(self, "gamma_values", gv)

    def resolve(self, data: GroupedDataset, labels=None) -> tuple[tuple[float, ...], tuple[float, ...]]:
        """Concrete grids.  With fold ``labels`` the largest lambda zeroes
        every fold's training fit as well as the full-data fit."""
        lams = self.lambda_values
        if lams is None:
            lmax = lambda_max_grouped(standardize_by_group(data)[0])
            for f in range(self.folds if labels is not None else 0):
                rows = [np.flatnonzero(lab != f) for lab in labels]
                lmax = max(lmax, lambda_max_grouped(standardize_by_group(data.subset_rows(rows))[0]))
            if lmax <= 0:
                lmax = 1.0
            lams = tuple(np.geomspace(lmax, self.lambda_ratio * lmax, self.n_lambda))
        gams = self.gamma_values if self.gamma_values is not None else default_gammas(data)
        return tuple(lams), tuple(gams)


def make_folds(data: GroupedDataset, folds: int, seed: int = 0,
               stratify: bool = True) -> list[np.ndarray]:
    """Fold label per row, one array per group.

    Stratified: each group is shuffled independently and dealt round-robin,
    so every fold receives rows from every group.
    """
    if stratify:
        labels = []
        for k, g in enumerate(data):
            if g.n < folds:
                raise ValidationError(
                    f"group {g.group_id!r} has {g.n} samples, fewer than {folds} folds")
            rng = np.random.default_rng(np.random.SeedSequence([seed, k]))
            lab = np.empty(g.n, dtype=np.int64)
            lab[rng.permutation(g.n)] = np.arange(g.n) % folds
            labels.append(lab)
        return labels
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    flat = np.empty(data.n, dtype=np.int64)
    flat[rng.permutation(data.n)] = np.arange(data.n) % folds
    return np.split(flat, np.cumsum(data.n_k)[:-1])


@dataclass
class CvResult:
    best_lambda: float
    best_gamma: float
    table: list[tuple[float, float, int, float]]
    lambdas: tuple[float, ...]
    gammas: tuple[float, ...]

    def mean_errors(self) -> dict[tuple[float, float], float]:
        acc: dict[tuple[float, float], list[float]] = {}
        for lam, gam, _, err in self.table:
            acc.setdefault((lam, gam), []).append(err)
        return {key: float(np.mean(v)) for key, v in acc.items()}


def _select(means: dict[tuple[float, float], float]) -> tuple[float, float]:
    finite = {k: v for k, v in means.items() if np.isfinite(v)}
    if not finite:
        raise FusionError("no grid point produced a finite CV error")
    best = min(finite.values())
    tol = 1e-12 * max(1.0, abs(best))
    ties = [k for k, v in finite.items() if v <= best + tol]
    return max(ties)  # larger lambda, then larger gamma


def kfold_cv(data: GroupedDataset, method: str, grid: CvGrid = CvGrid(), tau=None,
             opts: SolverOptions = SolverOptions(max_iter=1000, tol=1e-7),
             epsilon: float = 1e-3) -> CvResult:
    """K-fold CV over ``(lambda, gamma)`` on raw data.

    Each training split is standardized within groups; held-out error is the
    weighted RMSE on the raw response scale.  Fits are warm-started down the
    lambda path for every gamma.
    """
    if method not in METHODS:
        raise ValidationError(f"unknown method {method!r}")
    labels = make_folds(data, grid.folds, grid.seed, grid.stratify_by_group)
    lams, gams = grid.resolve(data, labels)
    tau = as_tau(tau, data.K) if data.K > 1 else None
    table = []
    for f in range(grid.folds):
        train_rows = [np.flatnonzero(lab != f) for lab in labels]
        test_rows = [np.flatnonzero(lab == f) for lab in labels]
        if any(len(r) < 2 for r in train_rows):
            raise ValidationError(f"fold {f} leaves a group with fewer than 2 training samples")
        train_std, record = standardize_by_group(data.subset_rows(train_rows))
        keep = [k for k, r in enumerate(test_rows) if len(r)]
        if not keep:
            continue
        test = data.subset_rows(test_rows)
        test_std = record.transform(test)
        if method in FUSED:
            gamma_loop = gams
        else:
            gamma_loop = (gams[0],)
        for gam in gamma_loop:
            B = None
            for lam in lams:
                res = fit_method(train_std, method, lam, gam, tau, opts, B, epsilon)
                B = res.B
                preds = predict(test_std, B, record)
                p_list = [preds[data.groups[k].group_id] for k in keep]
                a_list = [test.groups[k].y for k in keep]
                err = weighted_rmse(p_list, a_list)
                targets = [gam] if method in FUSED else gams
                for g in targets:
                    table.append((lam, g, f, err))
    best_lam, best_gam = _select(CvResult(0, 0, table, lams, gams).mean_errors())
    return CvResult(best_lam, best_gam, table, lams, gams)


# --- comparison runner -------------------------------------------------------

def split_train_test(data: GroupedDataset, test_fraction: float, seed) -> tuple[
        GroupedDataset, GroupedDataset]:
    """Stratified split keeping >= 1 test and >= 2 training rows per group."""
    train_rows, test_rows = [], []
    for k, g in enumerate(data):
        rng = np.random.default_rng(np.random.SeedSequence([*np.atleast_1d(seed), k]))
        n_test = int(round(test_fraction * g.n))
        n_test = min(max(n_test, 1), g.n - 2)
        if n_test < 1:
            raise ValidationError(f"group {g.group_id!r} too small to split")
        perm = rng.permutation(g.n)
        test_rows.append(np.sort(perm[:n_test]))
        train_rows.append(np.sort(perm[n_test:]))
    return data.subset_rows(train_rows), data.subset_rows(test_rows)


def compute_tau(data: GroupedDataset, scheme: str = "uniform", alpha: float = 0.1):
    if scheme in ("uniform", "none", None):
        return None
    if scheme == "mean":
        return tau_mean_distance(data)
    if scheme == "kl":
        return tau_symmetrized_kl(data, alpha)
    raise ValidationError(f"unknown tau scheme {scheme!r}")


@dataclass
class ComparisonReport:
    """Long-format results: one row per (replicate, method, metric, subgroup)."""

    rows: list[dict] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)

    COLUMNS = ("sweep", "sweep_value", "replicate", "method", "metric", "subgroup", "value")

    def add(self, **row):
        self.rows.append(row)

    def extend(self, other: "ComparisonReport"):
        self.rows.extend(other.rows)
        self.failures.extend(other.failures)

    def values(self, method: str, metric: str, subgroup: str = "all", **where) -> np.ndarray:
        out = [r["value"] for r in self.rows
               if r["method"] == method and r["metric"] == metric and r["subgroup"] == subgroup
               and all(r.get(k) == v for k, v in where.items())]
        return np.array(out, dtype=float)

    def summary(self, metric: str, **where) -> dict[str, tuple[float, float]]:
        methods = sorted({r["method"] for r in self.rows})
        out = {}
        for m in methods:
            v = self.values(m, metric, **where)
            v = v[~np.isnan(v)]
            if v.size:
                out[m] = (float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.rows:
            w.writerow([r.get("sweep", ""), _fmt(r.get("sweep_value", "")), r["replicate"],
                        r["method"], r["metric"], r["subgroup"], _fmt(r["value"])])
        for f in self.failures:
            w.writerow([f.get("sweep", ""), _fmt(f.get("sweep_value", "")), f["replicate"],
                        f.get("method", ""), "failed", f.get("error", ""), "1"])
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def replicate_seed(seed: int, replicate: int) -> int:
    return int(np.random.SeedSequence([seed, replicate]).generate_state(1)[0])


def run_replicate(sim_config: SimulationConfig, models, methods: Sequence[str], grid: CvGrid,
                  replicate: int, opts: SolverOptions, tau_scheme: str = "uniform",
                  test_fraction: float = 0.2, include_timing: bool = False,
                  tags: dict | None = None) -> ComparisonReport:
    tags = tags or {}
    report = ComparisonReport()
    rep_seed = replicate_seed(sim_config.seed, replicate)
    cfg = dataclasses.replace(sim_config, seed=rep_seed, group_models=tuple(models))
    sim = simulate(cfg)
    train, test = split_train_test(sim.data, test_fraction, [rep_seed, 7])
    tau = compute_tau(train, tau_scheme)
    rep_grid = dataclasses.replace(grid, seed=replicate_seed(grid.seed, replicate))
    truth = sim.truth.active_sets
    for method in methods:
        try:
            t0 = time.perf_counter()
            cv = kfold_cv(train, method, rep_grid, tau, opts)
            train_std, record = standardize_by_group(train)
            fit = fit_method(train_std, method, cv.best_lambda, cv.best_gamma, tau, opts)
            elapsed = time.perf_counter() - t0
        except FusionError as exc:
            log.warning("replicate %d, %s failed: %s", replicate, method, exc)
            report.failures.append(dict(tags, replicate=replicate, method=method, error=str(exc)))
            continue
        preds = predict_raw(test, fit.B, record)
        p_list = [preds[g.group_id] for g in test]
        a_list = [g.y for g in test]
        base = dict(tags, replicate=replicate, method=method)
        report.add(**base, metric="weighted_rmse", subgroup="all",
                   value=weighted_rmse(p_list, a_list))
        for g, r in zip(test, group_rmse(p_list, a_list)):
            report.add(**base, metric="rmse", subgroup=g.group_id, value=float(r))
        # undefined when the truth has no active (or no inactive) entry
        degenerate = truth.all() or not truth.any()
        report.add(**base, metric="auroc", subgroup="all",
                   value=np.nan if degenerate else auroc_active(fit.B, truth))
        report.add(**base, metric="lambda", subgroup="all", value=float(cv.best_lambda))
        report.add(**base, metric="gamma", subgroup="all",
                   value=float(cv.best_gamma) if method in FUSED else 0.0)
        if include_timing:
            report.add(**base, metric="runtime_seconds", subgroup="all", value=elapsed)
    return report


def run_comparison(sim_config: SimulationConfig, methods: Sequence[str] = ("fused_l2", "pooled", "subgroupwise"),
                   grid: CvGrid = CvGrid(), replicates: int = 10,
                   opts: SolverOptions = SolverOptions(max_iter=1000, tol=1e-7),
                   tau_scheme: str = "uniform", test_fraction: float = 0.2,
                   include_timing: bool = False, threads: int = 1,
                   tags: dict | None = None,
                   progress: Callable[[int], None] | None = None) -> ComparisonReport:
    """Simulate, tune by CV on an 80/20 training split, and score every method.

    Group covariate models are drawn once from ``sim_config.seed`` and held
    fixed; coefficients, covariates, noise and splits are redrawn per
    replicate from streams derived from ``(seed, replicate)``.  Timing rows
    are off by default so reports are byte-reproducible.
    """
    for m in methods:
        if m not in METHODS:
            raise ValidationError(f"unknown method {m!r}")
    models = resolve_group_models(sim_config)

    def one(r):
        rep = run_replicate(sim_config, models, methods, grid, r, opts, tau_scheme,
                            test_fraction, include_timing, tags)
        if progress:
            progress(r)
        return rep

    report = ComparisonReport()
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(one, range(replicates)))
    else:
        parts = [one(r) for r in range(replicates)]
    for part in parts:
        report.extend(part)
    return report
