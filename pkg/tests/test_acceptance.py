"""Acceptance criteria, one test each, at the agreed tolerances.

Each test records a ``criterion N: PASS|FAIL ...`` line that is printed in
the terminal summary, then asserts.
"""
import time

import numpy as np
import pytest

from subgroup_fusion.baselines import LassoProblem, fit_pooled, lasso_cd
from subgroup_fusion.cli import main
from subgroup_fusion.core import (
    FusionNorm,
    FusionWeights,
    PenaltyConfig,
    SolverOptions,
    objective_l1,
    objective_l2,
)
from subgroup_fusion.evaluation import CvGrid, run_comparison
from subgroup_fusion.simulation import SimulationConfig
from subgroup_fusion.solver_l1 import (
    build_C,
    fit_proximal,
    gradient,
    smooth_objective,
    smoothing_mu,
)
from subgroup_fusion.solver_l2 import fit_augmented, fit_cd
from subgroup_fusion.weighting import tau_symmetrized_kl

from conftest import ACCEPTANCE_LINES, make_data
from oracles import central_gradient, kl_quadrature, pattern_search

TIGHT = SolverOptions(20000, 1e-13)


def _warm_up():
    """Compile the numba kernels so time budgets measure solving, not JIT."""
    data = make_data(0, K=2, p=2, n_k=5)
    for norm in (FusionNorm.L2, FusionNorm.L1):
        cfg = PenaltyConfig(1.0, 1.0, norm)
        if norm is FusionNorm.L2:
            fit_cd(data, cfg, opts=SolverOptions(2, 1e-3))
            fit_augmented(data, cfg, opts=SolverOptions(2, 1e-3))
        else:
            fit_proximal(data, cfg, opts=SolverOptions(2, 1e-3))


def record(n: int, ok: bool, detail: str):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_criterion_1_solver_equivalence():
    rng = np.random.default_rng(1)
    _warm_up()
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(25):
        data = make_data(1000 + seed, K=3, p=10, n_k=20)
        cfg = PenaltyConfig(float(np.exp(rng.uniform(np.log(0.01), np.log(100)))),
                            float(np.exp(rng.uniform(np.log(0.01), np.log(100)))))
        a = fit_cd(data, cfg, opts=TIGHT)
        b = fit_augmented(data, cfg, opts=TIGHT)
        fa, fb = objective_l2(data, a.B, cfg), objective_l2(data, b.B, cfg)
        worst = max(worst, abs(fa - fb) / max(abs(fa), abs(fb)))
    elapsed = time.perf_counter() - t0
    record(1, worst <= 1e-4 and elapsed < 5.0,
           f"max rel objective gap {worst:.2e} (tol 1e-4), {elapsed:.2f} s (budget 5 s)")


def test_criterion_2_lasso_recovery():
    worst = worst_l1 = 0.0
    for seed in range(10):
        lam = 0.5 + seed
        # K = 1: the fused solvers reduce to one lasso
        one = make_data(2000 + seed, K=1, p=10, n_k=30)
        ref = lasso_cd(LassoProblem(one.groups[0].X, one.groups[0].y, lam), TIGHT).objective
        for fit in (fit_cd, fit_augmented):
            got = objective_l2(one, fit(one, PenaltyConfig(lam, 5.0), opts=TIGHT).B,
                               PenaltyConfig(lam, 5.0))
            worst = max(worst, abs(got - ref) / abs(ref))
        # gamma = 0: one lasso per group
        data = make_data(3000 + seed, K=3, p=10, n_k=20)
        ref = sum(lasso_cd(LassoProblem(g.X, g.y, lam), TIGHT).objective for g in data)
        cfg = PenaltyConfig(lam, 0.0)
        for fit in (fit_cd, fit_augmented):
            got = objective_l2(data, fit(data, cfg, opts=TIGHT).B, cfg)
            worst = max(worst, abs(got - ref) / abs(ref))
        # the l1 solver is accurate to epsilon in absolute terms, so it needs a
        # finer smoothing level than the default to reach 1e-6 relative
        cfg1 = PenaltyConfig(lam, 0.0, FusionNorm.L1, epsilon=1e-5)
        got = objective_l1(data, fit_proximal(data, cfg1, opts=SolverOptions(300000, 1e-15)).B,
                           cfg1)
        worst_l1 = max(worst_l1, abs(got - ref) / abs(ref))
    record(2, max(worst, worst_l1) <= 1e-6,
           f"max rel gap to classical lasso: l2 solvers {worst:.2e}, l1 solver (eps 1e-5) "
           f"{worst_l1:.2e} (tol 1e-6)")


def test_criterion_3_fusion_limit():
    lam = 1.0
    data = make_data(31, K=3, p=8, n_k=25, shared=True)
    fused = fit_cd(data, PenaltyConfig(lam, 1e6), FusionWeights.uniform(3),
                   SolverOptions(50000, 1e-14))
    spread = float(np.max(np.ptp(fused.B, axis=1)))
    # equal columns pay the lasso term once per group, so the pooled lasso
    # with the matching penalty is the one at K * lambda
    pooled = fit_pooled(data, data.K * lam, TIGHT)
    gap = float(np.max(np.abs(fused.B - pooled.B)))
    record(3, spread < 1e-3 and gap < 1e-2,
           f"column spread {spread:.2e} (tol 1e-3), |fused - pooled(K*lambda)| {gap:.2e} "
           "(tol 1e-2)")


def test_criterion_4_smoothed_gradient():
    rng = np.random.default_rng(4)
    worst_grad, gap_ok, points = 0.0, True, 0
    for seed in range(10):
        data = make_data(4000 + seed, K=3, p=8, n_k=15)
        lam, gamma = rng.uniform(0.5, 5), rng.uniform(0.5, 5)
        tau = rng.uniform(0, 1, (3, 3))
        tau = np.triu(tau, 1) + np.triu(tau, 1).T
        C = build_C(3, lam, gamma, tau)
        mu = smoothing_mu(1e-2, 8, 3)
        B = rng.standard_normal((8, 3))
        G = gradient(data, B, C, mu)
        fd = central_gradient(lambda b: smooth_objective(data, b, C, mu), B, h=1e-6)
        worst_grad = max(worst_grad, np.linalg.norm(G - fd) / np.linalg.norm(fd))
        n_edges = 3
        bound = mu * 8 * (3 + n_edges) / 2
        for Bt in (B, np.zeros_like(B), 1e-4 * B):
            f_true = objective_l1(data, Bt, PenaltyConfig(lam, gamma, FusionNorm.L1), tau)
            gap = f_true - smooth_objective(data, Bt, C, mu)
            gap_ok &= -1e-9 <= gap <= bound + 1e-9
            points += 1
    record(4, worst_grad < 1e-4 and gap_ok,
           f"max rel gradient error {worst_grad:.2e} (tol 1e-4); smoothing gap within "
           f"[0, mu p (K+|E|)/2] at {points} points: {gap_ok}")


def test_criterion_5_l1_accuracy():
    _warm_up()
    t0 = time.perf_counter()
    worst = -np.inf
    for seed in range(5):
        data = make_data(5000 + seed, K=2, p=2, n_k=10)
        cfg = PenaltyConfig(2.0, 3.0, FusionNorm.L1, epsilon=1e-3)
        res = fit_proximal(data, cfg, opts=SolverOptions(50000, 1e-12))
        f = lambda b: objective_l1(data, b.reshape(2, 2), cfg)  # noqa: E731
        start = np.concatenate([np.linalg.lstsq(g.X, g.y, rcond=None)[0] for g in data])
        _, best = pattern_search(f, start.reshape(2, 2, order="F").ravel())
        worst = max(worst, res.objective - best)
    elapsed = time.perf_counter() - t0
    record(5, worst <= 1e-3 + 1e-3 and elapsed < 10.0,
           f"max excess over brute force {worst:.2e} (tol eps + 1e-3 = 2e-3), "
           f"{elapsed:.2f} s (budget 10 s)")


def test_criterion_6_monotone_and_kkt():
    rng = np.random.default_rng(6)
    mono, kkt = 0.0, 0.0
    for seed in range(10):
        data = make_data(6000 + seed, K=3, p=10, n_k=[12, 20, 30])
        res = fit_cd(data, PenaltyConfig(rng.uniform(0.1, 10), rng.uniform(0, 10)),
                     opts=TIGHT)
        mono = max(mono, float(np.max(np.diff(res.objective_trace), initial=0.0)))
        g = data.groups[0]
        lam = rng.uniform(0.1, 10)
        # objective change is quadratic in the KKT residual, hence the tight tol
        fit = lasso_cd(LassoProblem(g.X, g.y, lam), SolverOptions(100000, 1e-15))
        assert fit.converged
        score = 2 * g.X.T @ (g.y - g.X @ fit.B)
        zero = fit.B == 0
        viol = np.concatenate([np.abs(score[zero]) - lam,
                               np.abs(score[~zero] - lam * np.sign(fit.B[~zero]))])
        kkt = max(kkt, float(np.max(viol)))
    record(6, mono <= 1e-10 and kkt <= 1e-6,
           f"largest objective increase {mono:.2e} (slack 1e-10), KKT residual {kkt:.2e} "
           "(tol 1e-6)")


@pytest.fixture(scope="module")
def trend_runs():
    reports, t0 = {}, time.perf_counter()
    for k0 in (1, 5, 9):
        cfg = SimulationConfig(K=9, K0=k0, p=50, n_total=250, noise_sd=1.0, seed=2026)
        reports[k0] = run_comparison(cfg, ("fused_l2", "pooled", "subgroupwise"),
                                     CvGrid(folds=10, seed=2026), replicates=20)
    return reports, time.perf_counter() - t0


def test_criterion_7_simulation_trend(trend_runs):
    reports, elapsed = trend_runs
    s = {k0: rep.summary("weighted_rmse") for k0, rep in reports.items()}
    f5, p5, w5 = s[5]["fused_l2"][0], s[5]["pooled"][0], s[5]["subgroupwise"][0]
    at5 = f5 <= p5 and f5 <= w5
    f9, (p9, sd9) = s[9]["fused_l2"][0], s[9]["pooled"]
    at9 = abs(f9 - p9) <= max(sd9, s[9]["fused_l2"][1])
    f1, (w1, sd1) = s[1]["fused_l2"][0], s[1]["subgroupwise"]
    at1 = abs(f1 - w1) <= max(sd1, s[1]["fused_l2"][1])
    failures = sum(len(r.failures) for r in reports.values())
    record(7, at5 and at9 and at1 and elapsed < 900 and failures == 0,
           f"K0=5 fused {f5:.3f} vs pooled {p5:.3f}, subgroup-wise {w5:.3f}; "
           f"K0=9 fused {f9:.3f} vs pooled {p9:.3f} (sd {sd9:.3f}); "
           f"K0=1 fused {f1:.3f} vs subgroup-wise {w1:.3f} (sd {sd1:.3f}); "
           f"{elapsed:.0f} s (budget 900 s)")


def test_criterion_8_auroc(trend_runs):
    reports, _ = trend_runs
    a5 = reports[5].summary("auroc")
    ok_order = a5["fused_l2"][0] >= a5["subgroupwise"][0]
    means = [v[0] for rep in reports.values() for v in rep.summary("auroc").values()]
    ok_range = all(0.5 <= m <= 1.0 for m in means)
    record(8, ok_order and ok_range,
           f"K0=5 AUROC fused {a5['fused_l2'][0]:.3f} vs subgroup-wise "
           f"{a5['subgroupwise'][0]:.3f}; mean AUROCs in [{min(means):.3f}, {max(means):.3f}]")


def test_criterion_9_weighting():
    from subgroup_fusion.core import GroupedDataset

    rng = np.random.default_rng(9)
    worst, valid = 0.0, True
    for _ in range(10):
        m = rng.normal(0, 1, 2)
        v = rng.uniform(0.3, 3, 2)
        # per-group samples with exact target mean and variance (ddof=1)
        groups = []
        for k in range(2):
            z = rng.standard_normal(30)
            z = (z - z.mean()) / z.std(ddof=1)
            groups.append((f"g{k}", (m[k] + np.sqrt(v[k]) * z)[:, None], np.zeros(30)))
        data = GroupedDataset(groups)
        alpha = 0.1
        tau = tau_symmetrized_kl(data, alpha=alpha, standardize=False)
        sym = 0.5 * (kl_quadrature(m[0], v[0] + alpha, m[1], v[1] + alpha)
                     + kl_quadrature(m[1], v[1] + alpha, m[0], v[0] + alpha))
        # with K = 2 the only distance is d_max, so compare it via a third,
        # identical group that pins the scale
        groups.append(("g2", groups[0][1].copy(), np.zeros(30)))
        tau3 = tau_symmetrized_kl(GroupedDataset(groups), alpha=alpha, standardize=False)
        from subgroup_fusion.weighting import group_models, kl_distance_matrix
        d = kl_distance_matrix(group_models(GroupedDataset(groups), alpha, standardize=False))
        worst = max(worst, abs(d[0, 1] - sym))
        for t in (tau, tau3):
            T = np.asarray(t)
            valid &= bool(np.allclose(T, T.T) and np.all(np.diag(T) == 0)
                          and T.min() >= 0 and T.max() <= 1)
    record(9, worst < 1e-3 and valid,
           f"max |KL - quadrature| {worst:.2e} (tol 1e-3); weights valid: {valid}")


def test_criterion_10_determinism(tmp_path):
    args = ["compare", "--K", "4", "--p", "10", "--n", "100", "--sweep", "K0",
            "--sweep_values", "1,3", "--replicates", "2", "--folds", "3", "--n_lambda", "6",
            "--seed", "10", "--threads", "2"]
    codes = [main(args + ["--out_dir", str(tmp_path / d)]) for d in ("a", "b")]
    a = (tmp_path / "a" / "report.csv").read_bytes()
    b = (tmp_path / "b" / "report.csv").read_bytes()
    record(10, codes == [0, 0] and a == b,
           f"exit codes {codes}; reports byte-identical: {a == b} ({len(a)} bytes)")
