"""
Alternating estimation of composite quantile factor models.

One cycle updates the factors (one composite quantile regression per
period), then the loadings (one per unit), then the K intercepts in closed
form. Cycles repeat until the relative change of the composite objective
drops below ``outer_tol``; the final solution is normalized so that
``F'F/T = I`` and ``L'L/N`` is diagonal with non-increasing entries.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    CqfmConfig,
    DegeneracyError,
    FactorFit,
    Panel,
    QuantileGrid,
    panel_loss,
)
from .mm import intercept_update, mm_solve_shared_design
from .rng import make_generator

log = logging.getLogger(__name__)


@dataclass
class NormalizationResult:
    """Normalized factors/loadings and the matrix with ``F @ rotation = F*``."""

    factors: np.ndarray
    loadings: np.ndarray
    rotation: np.ndarray


def normalize_solution(F, L) -> NormalizationResult:
    """
    Rotate ``(F, L)`` to the identification normalization without changing
    the common component ``F @ L.T``.

    The factors are whitened with the inverse symmetric square root of
    ``F'F/T``, both matrices are then rotated by the eigenvectors of the
    whitened ``L'L/N`` (decreasing eigenvalues, ties kept in index order),
    and each column is sign-flipped so that the largest-magnitude loading
    entry is positive.

    Raises
    ------
    DegeneracyError
        If ``F'F`` is singular.
    """
    F = np.asarray(F, dtype=float)
    L = np.asarray(L, dtype=float)
    T, r = F.shape
    N = L.shape[0]
    if L.shape[1] != r:
        raise ValueError("F and L must have the same number of columns")
    S = F.T @ F / T
    vals, vecs = np.linalg.eigh(S)
    scale = max(vals.max(), 1e-300)
    if vals.min() <= 1e-13 * scale:
        # name the column that is (closest to) a combination of the others
        worst = int(np.argmax(np.abs(vecs[:, 0])))
        raise DegeneracyError(f"F'F is singular; factor column {worst} is linearly dependent on the others")
    inv_sqrt = (vecs / np.sqrt(vals)) @ vecs.T
    sqrt = (vecs * np.sqrt(vals)) @ vecs.T
    F1 = F @ inv_sqrt
    L1 = L @ sqrt
    lam, V = np.linalg.eigh(L1.T @ L1 / N)
    order = np.argsort(-lam, kind="stable")
    V = V[:, order]
    signs = np.ones(r)
    L2 = L1 @ V
    for j in range(r):
        k = int(np.argmax(np.abs(L2[:, j])))
        if L2[k, j] < 0:
            signs[j] = -1.0
    V = V * signs
    return NormalizationResult(F1 @ V, L1 @ V, inv_sqrt @ V)


EXACT_FIT_REL = 1e-10


def exact_fit_level(Y) -> float:
    """
    Loss below which a fit counts as exact.

    Surplus factors on an exactly low-rank panel leave losses of 1e-14 to
    1e-12 relative to the data scale that wander without settling, so the
    floor sits well above roundoff but far below any noisy-panel loss.
    """
    return EXACT_FIT_REL * float(np.mean(np.abs(Y)))


def _check_rank(panel: Panel, r: int):
    if int(r) != r or r < 1:
        raise ValueError(f"rank must be a positive integer, got {r}")
    if r >= min(panel.T, panel.N):
        raise ValueError(f"rank {r} must be smaller than min(T, N) = {min(panel.T, panel.N)}")


def fit_pca(panel: Panel, r: int) -> FactorFit:
    """
    Principal-components factors: ``sqrt(T)`` times the top ``r``
    eigenvectors of ``Y Y' / (NT)``, loadings ``Y'F/T``, zero intercepts.
    """
    _check_rank(panel, r)
    Y = panel.values
    T, N = Y.shape
    vals, vecs = np.linalg.eigh(Y @ Y.T / (N * T))
    order = np.argsort(-vals, kind="stable")[:r]
    F = np.sqrt(T) * vecs[:, order]
    L = Y.T @ F / T
    norm = normalize_solution(F, L)
    loss = float(np.mean((Y - norm.factors @ norm.loadings.T) ** 2))
    return FactorFit(
        norm.factors, norm.loadings, np.zeros(1), [loss], True, 1, "PCA"
    )


def _initial_factors(panel: Panel, r: int, config: CqfmConfig):
    if config.init == "pca":
        return fit_pca(panel, r).factors
    return make_generator(config.seed).standard_normal((panel.T, r))


def fit_cqfm(
    panel: Panel,
    r: int,
    grid: QuantileGrid,
    config: Optional[CqfmConfig] = None,
    method_tag: Optional[str] = None,
) -> FactorFit:
    """
    Estimate ``r`` factors by minimizing the composite check loss over ``grid``.

    With a single quantile position this is the quantile factor model (QFM)
    estimator; ``method_tag`` defaults accordingly.
    """
    config = config or CqfmConfig()
    _check_rank(panel, r)
    # Work on the units in a canonical (lexicographic) order and map the
    # loadings back at the end. Floating-point sums over units then run in
    # the same order however the columns were supplied, so relabelling the
    # units permutes the loadings exactly.
    order = np.lexsort(panel.values[::-1])
    Y = panel.values[:, order]
    taus = grid.taus
    tag = method_tag or ("QFM" if grid.K == 1 else "CQFM")
    workers = config.workers
    # no vertex polish between cycles: an exact-interpolation start gives
    # its rows weight 1/eps in the next MM pass and pins the block there

    F = _initial_factors(Panel(Y), r, config)
    sol = mm_solve_shared_design(F, Y.T, np.zeros(grid.K), taus, np.zeros((panel.N, r)), config, polish=False, workers=workers)
    L = sol.coef
    b = intercept_update(Y - F @ L.T, taus)
    degenerate = sol.degenerate
    prev = panel_loss(Y, F @ L.T, b, taus)
    exact = exact_fit_level(Y)
    trace = []
    converged = False
    it = 0
    for it in range(1, config.max_outer_iters + 1):
        sol = mm_solve_shared_design(L, Y, b, taus, F, config, polish=False, workers=workers)
        F = sol.coef
        degenerate |= sol.degenerate
        sol = mm_solve_shared_design(F, Y.T, b, taus, L, config, polish=False, workers=workers)
        L = sol.coef
        degenerate |= sol.degenerate
        b = intercept_update(Y - F @ L.T, taus)
        loss = panel_loss(Y, F @ L.T, b, taus)
        trace.append(loss)
        if abs(prev - loss) <= config.outer_tol * abs(prev) or loss <= exact:
            converged = True
            break
        # rescaling keeps both blocks well conditioned; the loss is unchanged
        try:
            norm = normalize_solution(F, L)
        except DegeneracyError:
            degenerate = True
            log.warning("factor matrix became singular at cycle %d", it)
            break
        F, L = norm.factors, norm.loadings
        prev = loss

    try:
        norm = normalize_solution(F, L)
        F, L = norm.factors, norm.loadings
    except DegeneracyError:
        degenerate = True
    if not converged:
        log.info("CQFM did not converge in %d cycles", config.max_outer_iters)
    L_out = np.empty_like(L)
    L_out[order] = L
    return FactorFit(F, L_out, b, trace, converged, it, tag, degenerate)


def fit_qfm(panel: Panel, r: int, tau: float = 0.5, config: Optional[CqfmConfig] = None) -> FactorFit:
    """Single-quantile special case of :func:`fit_cqfm`."""
    return fit_cqfm(panel, r, QuantileGrid([tau]), config, method_tag="QFM")


def fit_factors(panel: Panel, r: int, method: str, grid: QuantileGrid, config: Optional[CqfmConfig] = None) -> FactorFit:
    """Dispatch on ``method`` in {CQFM, QFM, PCA}; QFM uses tau = 0.5."""
    method = method.upper()
    if method == "CQFM":
        return fit_cqfm(panel, r, grid, config)
    if method == "QFM":
        return fit_qfm(panel, r, 0.5, config)
    if method == "PCA":
        return fit_pca(panel, r)
    raise ValueError(f"unknown method {method!r}")
