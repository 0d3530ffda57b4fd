"""Information-criterion selection of the number of factors."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import CqfmConfig, FactorFit, Panel, QuantileGrid, objective
from .estimator import exact_fit_level, fit_factors

log = logging.getLogger(__name__)

VARIANTS = ("V1", "V2")
LOSS_FLOOR = 1e-300


def _variant(v: str) -> str:
    v = str(v).upper()
    if v not in VARIANTS:
        raise ValueError(f"penalty variant must be one of {VARIANTS}, got {v!r}")
    return v


def penalty_q(N: int, T: int, variant: str = "V1") -> float:
    """
    Per-factor penalty.

    V1: ``((N+T)/(NT)) log(NT/(N+T))``; V2: ``log(log(NT/(N+T))) (N+T)/(NT)``,
    which shrinks faster and suits very heavy tails.
    """
    variant = _variant(variant)
    if N < 2 or T < 2:
        raise ValueError(f"need N, T >= 2, got ({N}, {T})")
    c = N * T / (N + T)
    if c <= 1:
        raise ValueError(f"NT/(N+T) = {c} must exceed 1")
    if variant == "V1":
        return (1 / c) * math.log(c)
    if c <= math.e:
        raise ValueError(f"V2 penalty needs NT/(N+T) > e, got {c}")
    return math.log(math.log(c)) / c


def information_criterion(panel: Panel, fit: FactorFit, grid: QuantileGrid, variant: str = "V1") -> float:
    """
    ``log(composite loss) + r * q(N, T)``.

    Losses at floating-point roundoff level count as exact fits and are
    floored at 1e-300, so exact fits are ranked by the penalty alone.
    """
    if fit.intercepts.size != grid.K:
        raise ValueError(f"fit has {fit.intercepts.size} intercepts but the grid has K={grid.K}")
    loss = objective(panel, fit, grid)
    if loss <= exact_fit_level(panel.values):
        loss = 0.0
    return math.log(max(loss, LOSS_FLOOR)) + fit.rank * penalty_q(panel.N, panel.T, variant)


def least_squares_criterion(panel: Panel, fit: FactorFit, variant: str = "V1") -> float:
    """Bai-Ng style ``log(mean squared residual) + r * q(N, T)`` for PCA fits."""
    resid = panel.values - fit.common_component()
    loss = float(np.mean(resid**2))
    if loss <= exact_fit_level(panel.values) ** 2:
        loss = 0.0
    return math.log(max(loss, LOSS_FLOOR)) + fit.rank * penalty_q(panel.N, panel.T, variant)


@dataclass
class SelectionReport:
    candidate_ranks: list
    ic_values: list
    chosen_rank: int
    penalty_variant: str
    boundary: bool = False
    fits: Optional[list] = field(default=None, repr=False)
    method: str = "CQFM"


def choose_rank(ranks, ic_values) -> int:
    """Argmin of the criterion, ties going to the smaller rank."""
    ic = np.asarray(ic_values, dtype=float)
    return int(ranks[int(np.flatnonzero(ic == ic.min())[0])])


def select_num_factors(
    panel: Panel,
    r_max: int,
    grid: QuantileGrid,
    config: Optional[CqfmConfig] = None,
    variant: str = "V1",
    method: str = "CQFM",
    standardize: bool = False,
    keep_fits: bool = False,
) -> SelectionReport:
    """
    Fit ranks 1..r_max with a shared seed and pick the IC minimizer.

    For ``method="PCA"`` the criterion is evaluated on the least-squares
    loss instead of the composite check loss.
    """
    variant = _variant(variant)
    method = method.upper()
    if int(r_max) != r_max or r_max < 1 or r_max >= min(panel.T, panel.N):
        raise ValueError(f"r_max must satisfy 1 <= r_max < min(T, N) = {min(panel.T, panel.N)}, got {r_max}")
    if standardize:
        panel = panel.standardized()
    if method == "QFM" and grid.K != 1:
        grid = QuantileGrid([0.5])
    ranks = list(range(1, int(r_max) + 1))
    ics, fits = [], []
    for r in ranks:
        try:
            fit = fit_factors(panel, r, method, grid, config)
        except (ValueError, ArithmeticError) as exc:
            raise type(exc)(f"rank {r}: {exc}") from exc
        if method == "PCA":
            ics.append(least_squares_criterion(panel, fit, variant))
        else:
            ics.append(information_criterion(panel, fit, grid, variant))
        if keep_fits:
            fits.append(fit)
    chosen = choose_rank(ranks, ics)
    boundary = chosen == ranks[-1]
    if boundary:
        log.warning("selected rank %d sits on the upper boundary r_max", chosen)
    return SelectionReport(ranks, ics, chosen, variant, boundary, fits if keep_fits else None, method)
