import itertools

import numpy as np
import pytest
from scipy.optimize import linprog

from cqfm.core import CqfmConfig, check_loss
from cqfm.mm import (
    StackedQrProblem,
    intercept_update,
    mm_quantile_solve,
    mm_solve_shared_design,
    sample_quantile_minimizer,
    vertex_descent,
)


def lp_quantile_fit(X, y, taus):
    """Exact stacked quantile regression as a linear program (u+ - u- = y - X b)."""
    M, p = X.shape
    c = np.concatenate([np.zeros(2 * p), taus, 1 - taus])
    A = np.hstack([X, -X, np.eye(M), -np.eye(M)])
    res = linprog(c, A_eq=A, b_eq=y, bounds=[(0, None)] * (2 * p + 2 * M), method="highs")
    assert res.status == 0
    return res.x[:p] - res.x[p:2 * p], res.fun


def brute_force_minimum(X, z, taus):
    """Smallest check loss over every basic solution (p interpolated rows)."""
    M, p = X.shape
    best = np.inf
    for rows in itertools.combinations(range(M), p):
        A = X[list(rows)]
        if abs(np.linalg.det(A)) < 1e-12:
            continue
        b = np.linalg.solve(A, z[list(rows)])
        best = min(best, check_loss(z - X @ b, taus).sum())
    return best


def grid_min_intercept(y, tau):
    cands = np.linspace(y.min() - 1, y.max() + 1, 20001)
    vals = [check_loss(y - b, tau).sum() for b in cands]
    return cands[int(np.argmin(vals))]


# without the polish step only a tight tolerance gets close to the optimum
TIGHT = CqfmConfig(inner_tol=1e-9, max_inner_iters=5000)


def test_problem_validation():
    with pytest.raises(ValueError):
        StackedQrProblem(np.ones((3, 1)), np.ones(2), 0.5, 0.0)
    with pytest.raises(ValueError):
        StackedQrProblem(np.ones((3, 1)), np.ones(3), 1.0, 0.0)
    with pytest.raises(ValueError):
        StackedQrProblem(np.ones((3, 1)), [1, np.nan, 2], 0.5, 0.0)


def test_intercept_only_median():
    prob = StackedQrProblem(np.ones((3, 1)), [1.0, 2.0, 9.0], 0.5, 0.0)
    assert mm_quantile_solve(prob).coef[0] == pytest.approx(2.0, abs=1e-9)


def test_intercept_only_lower_quartile():
    y = np.array([0.0, 1, 2, 3, 4])
    oracle = grid_min_intercept(y, 0.25)
    prob = StackedQrProblem(np.ones((5, 1)), y, 0.25, 0.0)
    b = mm_quantile_solve(prob).coef[0]
    assert oracle == pytest.approx(1.0, abs=1e-3)
    assert b == pytest.approx(1.0, abs=1e-9)


def test_slope_exact_fit():
    x = np.array([[1.0], [2.0], [-1.5], [0.5]])
    taus = np.array([0.2, 0.5, 0.7, 0.9])
    prob = StackedQrProblem(x, 3 * x[:, 0], taus, 0.0)
    assert mm_quantile_solve(prob).coef[0] == pytest.approx(3.0, abs=1e-8)


def test_perturbed_objective_descends():
    rng = np.random.default_rng(0)
    for _ in range(20):
        M, p = 40, 3
        X = rng.standard_normal((M, p))
        y = X @ rng.standard_normal(p) + rng.standard_exponential(M)
        prob = StackedQrProblem(X, y, rng.choice([0.2, 0.5, 0.8], M), rng.standard_normal(M) * 0.1)
        sol = mm_quantile_solve(prob, config=CqfmConfig(inner_tol=1e-9))
        tr = np.array(sol.perturbed_trace)
        assert np.all(np.diff(tr) <= 1e-12 * np.maximum(1, np.abs(tr[:-1])))


def test_matches_linear_program_oracle():
    rng = np.random.default_rng(1)
    for _ in range(40):
        M = int(rng.integers(5, 51))
        p = int(rng.integers(1, 4))
        X = rng.standard_normal((M, p))
        y = X @ rng.standard_normal(p) + rng.standard_t(3, M)
        taus = rng.choice([0.1, 0.25, 0.5, 0.75, 0.9], M)
        _, best = lp_quantile_fit(X, y, taus)
        sol = mm_quantile_solve(StackedQrProblem(X, y, taus, 0.0))
        assert sol.loss <= best + 1e-3


def test_matches_brute_force_at_default_tolerance():
    rng = np.random.default_rng(11)
    for _ in range(60):
        M = int(rng.integers(5, 14))
        p = int(rng.integers(1, 4))
        X = rng.standard_normal((M, p))
        y = X @ rng.standard_normal(p) + rng.standard_t(3, M)
        taus = rng.choice(np.arange(1, 10) / 10, M)
        off = 0.2 * rng.standard_normal(M)
        sol = mm_quantile_solve(StackedQrProblem(X, y, taus, off))
        assert sol.loss == pytest.approx(brute_force_minimum(X, y - off, taus), abs=1e-9)


def test_unpolished_tight_solver_close_to_optimum():
    rng = np.random.default_rng(12)
    for _ in range(20):
        X = rng.standard_normal((12, 2))
        y = X @ [0.5, 1.0] + rng.standard_normal(12)
        taus = rng.choice([0.25, 0.5, 0.75], 12)
        sol = mm_quantile_solve(StackedQrProblem(X, y, taus, 0.0), config=TIGHT, polish=False)
        assert sol.loss <= brute_force_minimum(X, y, taus) + 1e-3


def test_vertex_descent_from_any_start():
    rng = np.random.default_rng(13)
    X = np.column_stack([np.ones(15), rng.standard_normal(15)])
    z = X @ [1.0, -1.0] + rng.standard_exponential(15)
    taus = np.full(15, 0.3)
    target = brute_force_minimum(X, z, taus)
    for _ in range(10):
        coef, loss = vertex_descent(X, z, taus, 5 * rng.standard_normal(2))
        assert loss == pytest.approx(target, abs=1e-10)
        assert loss == pytest.approx(check_loss(z - X @ coef, taus).sum(), abs=1e-12)


def test_positive_homogeneity():
    rng = np.random.default_rng(2)
    for c in (0.01, 3.0, 250.0):
        X = rng.standard_normal((30, 2))
        y = X @ [1.0, -2.0] + rng.standard_normal(30)
        taus = rng.choice([0.3, 0.6], 30)
        b1 = mm_quantile_solve(StackedQrProblem(X, y, taus, 0.0)).coef
        b2 = mm_quantile_solve(StackedQrProblem(c * X, c * y, taus, 0.0)).coef
        # fitted values scale by c; compare on the original design
        np.testing.assert_allclose(c * X @ b1, (c * X) @ b2, atol=1e-6 * max(1, c))


def test_singular_design_uses_ridge_and_flags():
    X = np.column_stack([np.ones(6), np.ones(6)])
    y = np.array([1.0, 2, 3, 4, 5, 6])
    sol = mm_quantile_solve(StackedQrProblem(X, y, 0.5, 0.0))
    assert sol.degenerate
    assert np.all(np.isfinite(sol.coef))


def test_iteration_limit_reports_nonconvergence():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((50, 2))
    y = rng.standard_normal(50)
    sol = mm_quantile_solve(StackedQrProblem(X, y, 0.5, 0.0), config=CqfmConfig(max_inner_iters=1, inner_tol=1e-12))
    assert not sol.converged
    assert sol.iterations == 1


def test_start_length_checked():
    with pytest.raises(ValueError):
        mm_quantile_solve(StackedQrProblem(np.ones((3, 2)), np.ones(3), 0.5, 0.0), start=[0.0])


# ---------------------------------------------------------------- closed-form intercept


def test_sample_quantile_minimizer_examples():
    assert sample_quantile_minimizer([1, 2, 3, 4], 0.5) == 2
    assert sample_quantile_minimizer([5], 0.3) == 5
    assert sample_quantile_minimizer([1, 2, 3, 4], 0.75) == 3
    with pytest.raises(ValueError):
        sample_quantile_minimizer([], 0.5)
    with pytest.raises(ValueError):
        sample_quantile_minimizer([1.0], 1.0)


def test_sample_quantile_minimizer_attains_minimum():
    rng = np.random.default_rng(4)
    for _ in range(200):
        e = rng.standard_normal(int(rng.integers(1, 40)))
        tau = float(rng.uniform(0.01, 0.99))
        b = sample_quantile_minimizer(e, tau)
        best = min(check_loss(e - c, tau).sum() for c in e)
        assert check_loss(e - b, tau).sum() == pytest.approx(best, abs=1e-12)


def test_intercept_update_vectorized():
    e = np.array([4.0, 1.0, 3.0, 2.0])
    np.testing.assert_array_equal(intercept_update(e, [0.25, 0.5, 0.75]), [1.0, 2.0, 3.0])


# ---------------------------------------------------------------- batched solver


def _stacked(X, y, offsets, taus):
    K = len(taus)
    design = np.repeat(X, K, axis=0)
    return StackedQrProblem(design, np.repeat(y, K), np.tile(taus, len(y)), np.tile(offsets, len(y)))


def test_batched_matches_single_problem_solver():
    rng = np.random.default_rng(5)
    M, p, B = 25, 2, 6
    X = rng.standard_normal((M, p))
    Y = rng.standard_normal((B, p)) @ X.T + rng.standard_normal((B, M))
    taus = np.array([0.25, 0.5, 0.75])
    offsets = np.array([-0.6, 0.0, 0.6])
    cfg = CqfmConfig(inner_tol=1e-6)
    start = np.zeros((B, p))
    batch = mm_solve_shared_design(X, Y, offsets, taus, start, cfg, polish=False)
    for b in range(B):
        single = mm_quantile_solve(_stacked(X, Y[b], offsets, taus), start[b], cfg, polish=False)
        np.testing.assert_allclose(batch.coef[b], single.coef, atol=1e-9)


def test_batched_chunks_agree_with_serial():
    rng = np.random.default_rng(6)
    M, p, B = 30, 3, 11
    X = rng.standard_normal((M, p))
    Y = rng.standard_normal((B, M))
    taus = np.array([0.2, 0.5, 0.8])
    offsets = np.array([-1.0, 0.0, 1.0])
    cfg = CqfmConfig()
    a = mm_solve_shared_design(X, Y, offsets, taus, np.zeros((B, p)), cfg, workers=1)
    b = mm_solve_shared_design(X, Y, offsets, taus, np.zeros((B, p)), cfg, workers=4)
    np.testing.assert_allclose(a.coef, b.coef, atol=1e-12)
    np.testing.assert_array_equal(a.iterations, b.iterations)


def test_batched_never_worse_than_start():
    rng = np.random.default_rng(7)
    M, p, B = 20, 2, 5
    X = rng.standard_normal((M, p))
    Y = rng.standard_normal((B, M))
    taus = np.array([0.5])
    offsets = np.array([0.0])
    start = rng.standard_normal((B, p))
    sol = mm_solve_shared_design(X, Y, offsets, taus, start, CqfmConfig(max_inner_iters=2))
    for b in range(B):
        before = check_loss(Y[b] - X @ start[b], 0.5).sum()
        after = check_loss(Y[b] - X @ sol.coef[b], 0.5).sum()
        assert after <= before + 1e-12
