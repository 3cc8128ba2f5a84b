import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from subgroup_fusion._kernels import _row_shift

from subgroup_fusion.baselines import LassoProblem, fit_pooled, fit_subgroupwise, lasso_cd
from subgroup_fusion.core import (
    FusionNorm,
    FusionWeights,
    GroupedDataset,
    PenaltyConfig,
    SolverOptions,
    ValidationError,
    objective_l2,
)
from subgroup_fusion.solver_l2 import (
    build_augmented_system,
    cd_update,
    coordinate_minimizer,
    fit_augmented,
    fit_cd,
)

from conftest import make_data

TIGHT = SolverOptions(max_iter=20000, tol=1e-14)


def test_cd_update_no_fusion_is_lasso_update(small_data):
    rng = np.random.default_rng(0)
    B = rng.standard_normal((small_data.p, small_data.K))
    g = small_data.groups[1]
    x = g.X[:, 4]
    r = g.y - g.X @ B[:, 1] + x * B[4, 1]
    got = cd_update(small_data, B, 4, 1, PenaltyConfig(1.0, 0.0)).value
    assert got == pytest.approx(x @ r / (x @ x))


def test_cd_update_hand_example_against_line_search():
    # p=1, K=2, X1=[1], y1=2, beta_{1,2}=0, gamma=tau=1.
    # Exact minimizer of (2-b)^2 + (b-0)^2 is 1; the oracle is a 1-D search
    # on the full objective.
    data = GroupedDataset([("1", [[1.0]], [2.0]), ("2", [[1.0]], [0.0])])
    cfg = PenaltyConfig(0.0, 1.0)
    oracle = minimize_scalar(lambda b: objective_l2(data, np.array([[b, 0.0]]), cfg)).x
    assert oracle == pytest.approx(1.0, abs=1e-6)
    assert cd_update(data, np.zeros((1, 2)), 0, 0, cfg).value == pytest.approx(oracle, abs=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_coordinate_minimizer_matches_line_search(seed):
    data = make_data(seed, K=3, p=4, n_k=6)
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((4, 3))
    tau = FusionWeights([[0, 0.2, 0.9], [0.2, 0, 0.4], [0.9, 0.4, 0]])
    cfg = PenaltyConfig(lam=rng.uniform(0, 4), gamma=rng.uniform(0, 3))
    j, k = 2, 1

    def f(b):
        Bb = B.copy()
        Bb[j, k] = b
        return objective_l2(data, Bb, cfg, tau)

    oracle = minimize_scalar(f, bounds=(-20, 20), method="bounded",
                             options={"xatol": 1e-10}).x
    assert coordinate_minimizer(data, B, j, k, cfg, tau) == pytest.approx(oracle, abs=1e-6)


def test_cd_update_large_gamma_tends_to_weighted_mean():
    data = make_data(1, K=3, p=3, n_k=5)
    B = np.array([[0.0, 1.0, 4.0]] * 3)
    tau = FusionWeights([[0, 0.25, 0.75], [0.25, 0, 1], [0.75, 1, 0]])
    got = cd_update(data, B, 0, 0, PenaltyConfig(0.0, 1e8), tau).value
    assert got == pytest.approx((0.25 * 1 + 0.75 * 4) / 1.0, abs=1e-6)


def test_cd_update_degenerate_column():
    data = GroupedDataset([("a", np.zeros((3, 1)), [1.0, 2.0, 3.0])])
    out = cd_update(data, np.zeros((1, 1)), 0, 0, PenaltyConfig(1.0, 0.0))
    assert out.value == 0.0 and out.degenerate


def test_fit_cd_zero_solution_above_threshold(small_data):
    lam_max = 2 * max(np.max(np.abs(g.X.T @ g.y)) for g in small_data)
    res = fit_cd(small_data, PenaltyConfig(lam_max * 1.0001, 0.0))
    assert np.all(res.B == 0)
    res = fit_cd(small_data, PenaltyConfig(lam_max * 0.9, 0.0))
    assert np.any(res.B != 0)


def test_fit_cd_single_group_matches_lasso():
    data = make_data(4, K=1, p=8, n_k=30)
    g = data.groups[0]
    a = fit_cd(data, PenaltyConfig(3.0, 2.0), opts=TIGHT)
    b = lasso_cd(LassoProblem(g.X, g.y, 3.0), TIGHT)
    assert a.objective == pytest.approx(b.objective, rel=1e-8)


@pytest.mark.parametrize("seed", range(4))
def test_fit_cd_matches_augmented(seed):
    rng = np.random.default_rng(100 + seed)
    data = make_data(seed, K=3, p=10, n_k=20)
    cfg = PenaltyConfig(rng.uniform(0.5, 10), rng.uniform(0.1, 5))
    a = fit_cd(data, cfg, opts=TIGHT)
    b = fit_augmented(data, cfg, opts=TIGHT)
    fa, fb = objective_l2(data, a.B, cfg), objective_l2(data, b.B, cfg)
    assert fa == pytest.approx(fb, rel=1e-4)
    assert a.objective == pytest.approx(fa, rel=1e-10)


def test_fit_cd_trace_monotone_and_stationary():
    data = make_data(9, K=4, p=12, n_k=[10, 25, 15, 8])
    tau = FusionWeights(np.array([[0, 1, .5, .1], [1, 0, .3, 0], [.5, .3, 0, .8], [.1, 0, .8, 0]]))
    cfg = PenaltyConfig(2.0, 1.5)
    res = fit_cd(data, cfg, tau, TIGHT)
    assert np.all(np.diff(res.objective_trace) <= 1e-10)
    assert res.converged
    t = np.asarray(tau)
    for k, g in enumerate(data):
        r = g.y - g.X @ res.B[:, k]
        for j in range(data.p):
            fus = 2 * cfg.gamma * sum(t[k, kp] * (res.B[j, k] - res.B[j, kp])
                                      for kp in range(data.K) if kp != k)
            grad = -2 * g.X[:, j] @ r + fus
            if res.B[j, k] == 0:
                assert abs(grad) <= cfg.lam + 1e-6
            else:
                assert grad + cfg.lam * np.sign(res.B[j, k]) == pytest.approx(0, abs=1e-6)


def test_fit_cd_warm_start_converges_to_same_point(small_data):
    cfg = PenaltyConfig(2.0, 0.7)
    cold = fit_cd(small_data, cfg, opts=TIGHT)
    warm = fit_cd(small_data, cfg, opts=TIGHT, B_init=cold.B + 0.3)
    assert warm.objective == pytest.approx(cold.objective, rel=1e-9)


def test_fit_cd_scaling():
    # scaling y by c (with lambda scaled by c) scales the minimizer by c
    raw = make_data(5, K=2, p=5, n_k=15)
    c = 3.0
    scaled = GroupedDataset((g.group_id, g.X, c * g.y) for g in raw)
    a = fit_cd(raw, PenaltyConfig(1.0, 0.5), opts=TIGHT)
    b = fit_cd(scaled, PenaltyConfig(c * 1.0, 0.5), opts=TIGHT, B_init=c * a.B)
    np.testing.assert_allclose(b.B, c * a.B, atol=1e-7)


def test_fit_cd_rejects_l1():
    with pytest.raises(ValidationError):
        fit_cd(make_data(0), PenaltyConfig(1.0, 1.0, FusionNorm.L1))


def test_augmented_system_small_layout():
    data = GroupedDataset([("a", [[1.0, 2.0]], [1.0]), ("b", [[3.0, 4.0]], [2.0])])
    cfg = PenaltyConfig(1.0, 2.0)
    tau = FusionWeights([[0, 0.5], [0.5, 0]])
    sysm = build_augmented_system(data, cfg, tau)
    assert sysm.X_aug.shape == (4, 4)
    s = np.sqrt(2.0 * 0.5)
    np.testing.assert_allclose(sysm.X_aug[2], [s, 0, -s, 0])
    np.testing.assert_allclose(sysm.X_aug[3], [0, s, 0, -s])
    # top block is block diagonal
    np.testing.assert_allclose(sysm.X_aug[0], [1, 2, 0, 0])
    np.testing.assert_allclose(sysm.X_aug[1], [0, 0, 3, 4])
    np.testing.assert_allclose(sysm.y_aug, [1, 2, 0, 0])


def test_augmented_gamma_zero_has_no_fusion_rows(small_data):
    sysm = build_augmented_system(small_data, PenaltyConfig(1.0, 0.0))
    assert sysm.X_aug.shape[0] == small_data.n


@pytest.mark.parametrize("dense", [True, False])
def test_augmented_identity_with_fusion_term(dense):
    data = make_data(2, K=4, p=5, n_k=6)
    tau = FusionWeights(np.array([[0, 1, .5, 0], [1, 0, .3, .2], [.5, .3, 0, .8], [0, .2, .8, 0]]))
    cfg = PenaltyConfig(0.0, 1.7)
    sysm = build_augmented_system(data, cfg, tau, dense=dense)
    G = sysm.gamma_block
    rows = np.asarray(G.todense() if hasattr(G, "todense") else G)
    assert np.all((rows != 0).sum(axis=1) == 2)
    assert np.allclose(rows.sum(axis=1), 0)
    assert len(sysm.pairs) == 5  # pair (0, 3) has zero weight
    rng = np.random.default_rng(0)
    for _ in range(5):
        B = rng.standard_normal((5, 4))
        fusion = objective_l2(data, B, cfg, tau) - objective_l2(data, B, PenaltyConfig(0.0), tau)
        gb = rows @ sysm.flatten(B)
        assert gb @ gb == pytest.approx(fusion, abs=1e-10)


def test_augmented_gamma_zero_equals_independent_lassos(small_data):
    res = fit_augmented(small_data, PenaltyConfig(2.0, 0.0), opts=TIGHT)
    for k, g in enumerate(small_data):
        ind = lasso_cd(LassoProblem(g.X, g.y, 2.0), TIGHT)
        np.testing.assert_allclose(res.B[:, k], ind.B, atol=1e-6)


def test_augmented_large_gamma_fuses_columns():
    data = make_data(3, K=3, p=6, n_k=15, shared=True)
    res = fit_augmented(data, PenaltyConfig(0.1, 1e6), opts=SolverOptions(50000, 1e-15))
    assert np.max(np.ptp(res.B, axis=1)) < 1e-3


def test_pooled_equals_infinite_fusion_limit():
    # with all K columns equal the lasso term is paid K times, so the limit
    # is the pooled lasso at K * lambda
    data = make_data(11, K=3, p=6, n_k=20, shared=True)
    pooled = fit_pooled(data, 3 * 1.0, TIGHT)
    fused = fit_cd(data, PenaltyConfig(1.0, 1e6), opts=SolverOptions(20000, 1e-13))
    assert np.max(np.ptp(fused.B, axis=1)) < 1e-3
    np.testing.assert_allclose(fused.B, pooled.B, atol=1e-2)


def test_subgroupwise_equals_unfused(small_data):
    a = fit_subgroupwise(small_data, 1.5, TIGHT)
    b = fit_cd(small_data, PenaltyConfig(1.5, 0.0), opts=TIGHT)
    assert objective_l2(small_data, a.B, PenaltyConfig(1.5)) == pytest.approx(b.objective, rel=1e-6)



@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_row_shift_is_exact_minimizer(seed):
    rng = np.random.default_rng(seed)
    K = int(rng.integers(1, 6))
    row = rng.normal(0, 2, K) * (rng.random(K) < 0.7)
    a, b, lam = rng.uniform(0.1, 5), rng.normal(0, 5), rng.uniform(0, 5)

    def f(d):
        d = np.asarray(d, dtype=float)
        return a * d * d - 2 * b * d + lam * np.abs(row[:, None] + d).sum(axis=0)

    grid = np.linspace(-40, 40, 160001)
    x0 = grid[np.argmin(f(grid))]
    ref = minimize_scalar(lambda d: float(f(d)[0]), bounds=(x0 - 1e-3, x0 + 1e-3),
                          method="bounded", options={"xatol": 1e-12}).fun
    d = _row_shift(a, b, lam, row)
    assert float(f(d)[0]) <= ref + 1e-9
