"""Composite quantile factor models for panel data."""

__version__ = "0.1.0"

from .core import (
    CqfmConfig,
    DegeneracyError,
    FactorFit,
    Panel,
    QuantileGrid,
    check_loss,
    composite_check_loss,
    equally_spaced_grid,
    objective,
)
from .distributions import ErrorSpec, sample_error
from .estimator import fit_cqfm, fit_factors, fit_pca, fit_qfm, normalize_solution
from .inference import (
    AsymptoticCovariances,
    are_vs_pca,
    asymptotic_covariances,
    composite_numerator,
    density_at_quantiles,
)
from .macro import (
    ForecastSpec,
    RawSeriesTable,
    apply_tcode,
    prepare_panel,
    rolling_diffusion_forecast,
)
from .metrics import adjusted_r2_span, align_to_truth, common_component_mse
from .mm import StackedQrProblem, mm_quantile_solve, sample_quantile_minimizer
from .selection import information_criterion, penalty_q, select_num_factors
from .simulation import DgpSpec, run_replications, simulate_panel

__all__ = [
    "AsymptoticCovariances",
    "CqfmConfig",
    "DegeneracyError",
    "DgpSpec",
    "ErrorSpec",
    "FactorFit",
    "ForecastSpec",
    "Panel",
    "QuantileGrid",
    "RawSeriesTable",
    "StackedQrProblem",
    "adjusted_r2_span",
    "align_to_truth",
    "apply_tcode",
    "are_vs_pca",
    "asymptotic_covariances",
    "check_loss",
    "common_component_mse",
    "composite_check_loss",
    "composite_numerator",
    "density_at_quantiles",
    "equally_spaced_grid",
    "fit_cqfm",
    "fit_factors",
    "fit_pca",
    "fit_qfm",
    "information_criterion",
    "mm_quantile_solve",
    "normalize_solution",
    "objective",
    "penalty_q",
    "prepare_panel",
    "rolling_diffusion_forecast",
    "run_replications",
    "sample_error",
    "sample_quantile_minimizer",
    "select_num_factors",
    "simulate_panel",
]
