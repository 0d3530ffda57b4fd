"""
Asymptotic covariance estimates for the composite quantile factor model
and its efficiency relative to principal components.

The limiting covariance of both factor and loading estimates is the
classic composite-quantile sandwich::

    sum_{k1,k2} min(tau_k1, tau_k2) (1 - max(tau_k1, tau_k2))
    ---------------------------------------------------------  x  Sigma^{-1}
                 (sum_k f(b_k))^2

where ``f`` is the error density at the quantile intercepts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import DegeneracyError, FactorFit, Panel, QuantileGrid

NORMALIZATION_TOL = 1e-8


@dataclass
class AsymptoticCovariances:
    """
    Attributes
    ----------
    cov_factor : ndarray, shape (r, r)
        Limiting variance of ``sqrt(N) (F_t_hat - F_t)``.
    cov_loading : ndarray, shape (r, r)
        Limiting variance of ``sqrt(T) (lambda_i_hat - lambda_i)``.
    density_at_quantiles : ndarray, shape (K,)
        Error density evaluated at each intercept.
    composite_numerator : float
        Double sum of ``min(tau1, tau2) (1 - max(tau1, tau2))``.
    """

    cov_factor: np.ndarray
    cov_loading: np.ndarray
    density_at_quantiles: np.ndarray
    composite_numerator: float


def silverman_bandwidth(x) -> float:
    """Rule-of-thumb bandwidth ``1.06 min(sd, IQR/1.34) M^{-1/5}``."""
    x = np.asarray(x, dtype=float).ravel()
    sd = x.std(ddof=1)
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34)
    if spread <= 0:
        # heavy ties can zero the IQR while sd stays positive
        spread = sd
    return 1.06 * spread * x.size ** (-0.2)


def density_at_quantiles(residuals, points, chunk: int = 200_000) -> np.ndarray:
    """
    Gaussian kernel density estimate of ``residuals`` at ``points``.

    Parameters
    ----------
    residuals : array_like
        At least 10 finite values, not all equal.
    points : array_like
        Evaluation points.
    chunk : int
        Residuals are summed in blocks of this size to bound memory.

    Returns
    -------
    ndarray
        Strictly positive density values, one per point.
    """
    e = np.asarray(residuals, dtype=float).ravel()
    pts = np.atleast_1d(np.asarray(points, dtype=float))
    if e.size == 0:
        raise ValueError("residuals must be non-empty")
    if e.size < 10:
        raise ValueError(f"density estimation needs at least 10 residuals, got {e.size}")
    if not np.all(np.isfinite(e)) or not np.all(np.isfinite(pts)):
        raise ValueError("residuals and points must be finite")
    if np.ptp(e) == 0:
        raise ValueError("residuals are constant; the density is undefined")
    h = silverman_bandwidth(e)
    total = np.zeros(pts.size)
    for start in range(0, e.size, chunk):
        z = (pts[:, None] - e[None, start:start + chunk]) / h
        total += np.exp(-0.5 * z * z).sum(axis=1)
    dens = total / (e.size * h * np.sqrt(2 * np.pi))
    # far-tail points underflow to zero; keep the output strictly positive
    return np.maximum(dens, np.finfo(float).tiny)


def composite_numerator(grid: QuantileGrid) -> float:
    """``sum_{k1,k2} min(tau_k1, tau_k2) * (1 - max(tau_k1, tau_k2))``."""
    t = grid.taus
    lo = np.minimum.outer(t, t)
    hi = np.maximum.outer(t, t)
    return float(np.sum(lo * (1.0 - hi)))


def _check_normalized(fit: FactorFit):
    F, L = fit.factors, fit.loadings
    T, N = F.shape[0], L.shape[0]
    r = fit.rank
    SF = F.T @ F / T
    SL = L.T @ L / N
    if np.max(np.abs(SF - np.eye(r))) > NORMALIZATION_TOL:
        raise ValueError("fit is not normalized: F'F/T differs from the identity")
    off = SL - np.diag(np.diag(SL))
    scale = max(1.0, float(np.max(np.abs(np.diag(SL)))))
    if np.max(np.abs(off)) > NORMALIZATION_TOL * scale:
        raise ValueError("fit is not normalized: L'L/N is not diagonal")
    if np.any(np.diff(np.diag(SL)) > NORMALIZATION_TOL * scale):
        raise ValueError("fit is not normalized: L'L/N diagonal is not non-increasing")
    return SF, SL


def asymptotic_covariances(
    fit: FactorFit,
    panel: Panel,
    grid: QuantileGrid,
    density: Optional[np.ndarray] = None,
) -> AsymptoticCovariances:
    """
    Plug-in limiting covariances for a normalized fit.

    Residuals ``Y_it - lambda_i' F_t`` are pooled over all cells and a
    kernel density is evaluated at the fitted intercepts. Pass ``density``
    (one value per quantile position) to use known densities instead.

    Raises
    ------
    ValueError
        If the fit is not normalized or its dimensions do not match.
    DegeneracyError
        If ``L'L/N`` is singular.
    """
    T, N = panel.values.shape
    if fit.factors.shape[0] != T or fit.loadings.shape[0] != N:
        raise ValueError("fit dimensions do not match the panel")
    if fit.intercepts.size != grid.K:
        raise ValueError(f"fit has {fit.intercepts.size} intercepts but grid has K={grid.K}")
    _, SL = _check_normalized(fit)
    if density is None:
        resid = panel.values - fit.common_component()
        dens = density_at_quantiles(resid, fit.intercepts)
    else:
        dens = np.atleast_1d(np.asarray(density, dtype=float))
        if dens.size != grid.K or np.any(~np.isfinite(dens)) or np.any(dens <= 0):
            raise ValueError(f"density must hold {grid.K} positive finite values")
    num = composite_numerator(grid)
    ratio = num / dens.sum() ** 2
    vals = np.linalg.eigvalsh(SL)
    if vals.min() <= 1e-13 * max(vals.max(), 1e-300):
        raise DegeneracyError("L'L/N is singular")
    r = fit.rank
    cov_factor = ratio * np.linalg.inv(SL)
    cov_factor = 0.5 * (cov_factor + cov_factor.T)
    cov_loading = ratio * np.eye(r)
    return AsymptoticCovariances(cov_factor, cov_loading, dens, num)


def are_vs_pca(grid: QuantileGrid, density_at_quantiles, sigma2_eps: float) -> float:
    """
    Asymptotic efficiency of CQFM relative to PCA,
    ``sigma2 (sum_k f(b_k))^2 / numerator``. Values above one favour CQFM.
    """
    dens = np.atleast_1d(np.asarray(density_at_quantiles, dtype=float))
    if dens.size != grid.K:
        raise ValueError(f"expected {grid.K} density values, got {dens.size}")
    if np.any(~np.isfinite(dens)) or np.any(dens <= 0):
        raise ValueError("density values must be positive and finite")
    if not (np.isfinite(sigma2_eps) and sigma2_eps > 0):
        raise ValueError(f"sigma2_eps must be positive and finite, got {sigma2_eps}")
    return float(sigma2_eps * dens.sum() ** 2 / composite_numerator(grid))
