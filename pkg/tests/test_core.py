import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cqfm.core import (
    CqfmConfig,
    FactorFit,
    Panel,
    QuantileGrid,
    check_loss,
    composite_check_loss,
    equally_spaced_grid,
    objective,
    panel_loss,
)
from cqfm.metrics import adjusted_r2_span, common_component_mse


# ---------------------------------------------------------------- types


def test_panel_rejects_small_or_nonfinite():
    with pytest.raises(ValueError):
        Panel(np.ones((1, 5)))
    with pytest.raises(ValueError):
        Panel(np.ones((5, 1)))
    Y = np.ones((3, 3))
    Y[1, 1] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        Panel(Y)


def test_panel_is_read_only_copy():
    Y = np.arange(6.0).reshape(3, 2)
    p = Panel(Y, ["a", "b", "c"], ["u", "v"])
    Y[0, 0] = 99
    assert p.values[0, 0] == 0
    with pytest.raises(ValueError):
        p.values[0, 0] = 1
    assert (p.T, p.N) == (3, 2)


def test_panel_label_lengths_checked():
    with pytest.raises(ValueError):
        Panel(np.ones((3, 2)), time_labels=["a"])
    with pytest.raises(ValueError):
        Panel(np.ones((3, 2)), var_names=["a", "b", "c"])


def test_standardized_columns():
    rng = np.random.default_rng(0)
    p = Panel(rng.normal(3, 2, (40, 5))).standardized()
    np.testing.assert_allclose(p.values.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(p.values.std(axis=0), 1, atol=1e-12)
    with pytest.raises(ValueError, match="constant"):
        Panel(np.ones((4, 3))).standardized()


@pytest.mark.parametrize("taus", [[], [0.5, 0.5], [0.6, 0.4], [0.0, 0.5], [0.5, 1.0]])
def test_grid_invariants(taus):
    with pytest.raises(ValueError):
        QuantileGrid(taus)


def test_equally_spaced_grid_values():
    np.testing.assert_allclose(equally_spaced_grid(5).taus, [1 / 6, 2 / 6, 3 / 6, 4 / 6, 5 / 6])
    # the two-decimal rounding quoted for the five-point grid
    np.testing.assert_allclose(np.round(equally_spaced_grid(5).taus, 2), [0.17, 0.33, 0.5, 0.67, 0.83])
    np.testing.assert_allclose(equally_spaced_grid(1).taus, [0.5])
    np.testing.assert_allclose(equally_spaced_grid(3).taus, [0.25, 0.5, 0.75])
    with pytest.raises(ValueError):
        equally_spaced_grid(0)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"inner_tol": 0},
        {"outer_tol": -1},
        {"mm_epsilon": 0},
        {"max_outer_iters": 0},
        {"max_inner_iters": 0},
        {"init": "zeros"},
        {"seed": -1},
        {"seed": 2**64},
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        CqfmConfig(**kwargs)


def test_factor_fit_checks():
    with pytest.raises(ValueError):
        FactorFit(np.ones((4, 2)), np.ones((3, 1)), [0.0])
    with pytest.raises(ValueError):
        FactorFit(np.ones((4, 1)), np.ones((3, 1)), [0.0], method_tag="XYZ")


# ---------------------------------------------------------------- losses


def test_check_loss_convention_at_zero():
    assert check_loss(0.0, 0.3) == 0.0
    assert check_loss(-2.0, 0.3) == pytest.approx(1.4)
    assert check_loss(2.0, 0.3) == pytest.approx(0.6)


def test_composite_check_loss_examples():
    assert composite_check_loss(2.0, QuantileGrid([0.5]), [0.0]) == 1.0
    assert composite_check_loss(0.0, QuantileGrid([0.25, 0.5, 0.75]), [0, 0, 0]) == 0.0
    # 0.25 * 1 + 0.75 * 1
    assert composite_check_loss(1.0, QuantileGrid([0.25, 0.75]), [0, 0]) == 1.0


def test_composite_check_loss_length_mismatch():
    with pytest.raises(ValueError):
        composite_check_loss(1.0, QuantileGrid([0.25, 0.75]), [0.0])


@given(
    st.lists(st.floats(0.01, 0.99), min_size=1, max_size=6, unique=True),
    st.floats(-10, 10),
    st.floats(-10, 10),
)
@settings(max_examples=200, deadline=None)
def test_composite_check_loss_convex_midpoint(taus, u1, u2):
    grid = QuantileGrid(sorted(taus))
    off = np.zeros(grid.K)
    mid = composite_check_loss(0.5 * (u1 + u2), grid, off)
    avg = 0.5 * (composite_check_loss(u1, grid, off) + composite_check_loss(u2, grid, off))
    assert mid <= avg + 1e-12
    assert composite_check_loss(u1, grid, off) >= 0


def _random_fit(rng, T=8, N=6, r=2, K=3):
    return FactorFit(rng.standard_normal((T, r)), rng.standard_normal((N, r)), rng.standard_normal(K))


def test_objective_zero_on_exact_fit():
    rng = np.random.default_rng(1)
    fit = _random_fit(rng)
    fit.intercepts = np.zeros(3)
    panel = Panel(fit.common_component())
    assert objective(panel, fit, QuantileGrid([0.2, 0.5, 0.9])) == 0.0


def test_objective_one_by_one_value():
    # a 1 x 1 panel is below the Panel size floor, so evaluate the array form
    assert panel_loss(np.array([[3.0]]), np.array([[1.0]]), np.array([0.0]), np.array([0.5])) == 1.0


def test_objective_scale_equivariance():
    rng = np.random.default_rng(2)
    fit = _random_fit(rng)
    grid = QuantileGrid([0.2, 0.5, 0.9])
    Y = rng.standard_normal((8, 6))
    base = objective(Panel(Y), fit, grid)
    fit2 = FactorFit(2 * fit.factors, fit.loadings, 2 * fit.intercepts)
    assert objective(Panel(2 * Y), fit2, grid) == pytest.approx(2 * base, rel=1e-12)


def test_objective_rotation_invariance():
    rng = np.random.default_rng(3)
    grid = QuantileGrid([0.1, 0.5, 0.7])
    for _ in range(20):
        fit = _random_fit(rng)
        A = rng.standard_normal((2, 2)) + 2 * np.eye(2)
        rot = FactorFit(fit.factors @ np.linalg.inv(A).T, fit.loadings @ A, fit.intercepts)
        panel = Panel(rng.standard_normal((8, 6)))
        assert objective(panel, rot, grid) == pytest.approx(objective(panel, fit, grid), rel=1e-10)


def test_objective_dimension_errors():
    rng = np.random.default_rng(4)
    fit = _random_fit(rng)
    with pytest.raises(ValueError):
        objective(Panel(np.ones((7, 6))), fit, QuantileGrid([0.2, 0.5, 0.9]))
    with pytest.raises(ValueError):
        objective(Panel(np.ones((8, 6))), fit, QuantileGrid([0.5]))


# ---------------------------------------------------------------- metrics


def test_common_component_mse_examples():
    rng = np.random.default_rng(5)
    F0, L0 = rng.standard_normal((10, 3)), rng.standard_normal((7, 3))
    assert common_component_mse(F0, L0, F0, L0) == 0.0
    Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    assert common_component_mse(F0, L0, F0 @ Q, L0 @ Q) < 1e-28


def test_common_component_mse_shifted_loading():
    F0 = np.array([[1.0, 2.0], [3.0, -1.0]])
    L0 = np.array([[0.5, 1.0], [2.0, -1.0]])
    L1 = L0.copy()
    d = 0.3
    L1[1, 0] += d
    # only unit 2 moves: (d * F0[t, 0])^2 summed over t, divided by NT = 4
    expected = d**2 * (1.0**2 + 3.0**2) / 4
    assert common_component_mse(F0, L0, F0, L1) == pytest.approx(expected, rel=1e-12)


def test_common_component_mse_rotation_invariant_and_checks():
    rng = np.random.default_rng(6)
    F0, L0 = rng.standard_normal((10, 2)), rng.standard_normal((7, 2))
    F, L = rng.standard_normal((10, 3)), rng.standard_normal((7, 3))
    A = rng.standard_normal((3, 3)) + 3 * np.eye(3)
    m1 = common_component_mse(F0, L0, F, L)
    m2 = common_component_mse(F0, L0, F @ np.linalg.inv(A).T, L @ A)
    assert m1 == pytest.approx(m2, rel=1e-10)
    with pytest.raises(ValueError):
        common_component_mse(F0, L0, F[:9], L)
    with pytest.raises(ValueError):
        common_component_mse(F0 * np.nan, L0, F, L)


def test_adjusted_r2_span_examples():
    rng = np.random.default_rng(7)
    F0 = rng.standard_normal((60, 3))
    np.testing.assert_allclose(adjusted_r2_span(F0, F0), 1.0, atol=1e-12)
    A = rng.standard_normal((3, 3)) + 2 * np.eye(3)
    np.testing.assert_allclose(adjusted_r2_span(F0, F0 @ A), 1.0, atol=1e-12)


def test_adjusted_r2_span_independent_draws():
    rng = np.random.default_rng(8)
    vals = adjusted_r2_span(rng.standard_normal((500, 3)), rng.standard_normal((500, 3)))
    assert np.all(np.abs(vals) < 0.05)


def test_adjusted_r2_span_formula():
    rng = np.random.default_rng(9)
    T = 30
    F0 = rng.standard_normal((T, 1))
    Fh = F0 + 0.5 * rng.standard_normal((T, 2))
    X = np.column_stack([np.ones(T), Fh])
    beta = np.linalg.lstsq(X, F0[:, 0], rcond=None)[0]
    r2 = 1 - np.sum((F0[:, 0] - X @ beta) ** 2) / np.sum((F0[:, 0] - F0.mean()) ** 2)
    assert adjusted_r2_span(F0, Fh)[0] == pytest.approx(1 - (1 - r2) * (T - 1) / (T - 3), rel=1e-12)


def test_adjusted_r2_span_invariant_to_recombination():
    rng = np.random.default_rng(10)
    F0 = rng.standard_normal((80, 3))
    Fh = F0 @ rng.standard_normal((3, 3)) + 0.3 * rng.standard_normal((80, 3))
    A = rng.standard_normal((3, 3)) + 2 * np.eye(3)
    np.testing.assert_allclose(adjusted_r2_span(F0, Fh), adjusted_r2_span(F0, Fh @ A), atol=1e-10)


def test_adjusted_r2_span_drops_collinear_columns():
    rng = np.random.default_rng(11)
    F0 = rng.standard_normal((50, 2))
    Fh = np.column_stack([F0[:, 0], 2 * F0[:, 0], F0[:, 1]])
    res = adjusted_r2_span(F0, Fh, return_info=True)
    assert res.dropped == (1,)
    np.testing.assert_allclose(res.values, 1.0, atol=1e-12)


def test_adjusted_r2_span_needs_enough_rows():
    with pytest.raises(ValueError):
        adjusted_r2_span(np.random.default_rng(0).standard_normal((4, 1)), np.eye(4)[:, :3])
