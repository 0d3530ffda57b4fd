"""
Macro panel preparation and rolling diffusion-index forecasts.

Series are made stationary with the FRED transformation codes::

    1  x            4  ln x
    2  dx           5  d ln x
    3  d^2 x        6  d^2 ln x
                    7  d (x_t / x_{t-1} - 1)

A diffusion-index forecast regresses ``y_{s+1}`` on an intercept, the
current and ``n_lags - 1`` previous values of the target, and factors
estimated from the whole panel, all within a rolling window that ends at
the forecast origin.
"""

from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass, field, replace
from datetime import datetime
from typing import NamedTuple, Optional, Union

import numpy as np

from .core import CqfmConfig, Panel, QuantileGrid, equally_spaced_grid
from .estimator import fit_factors
from .io import fmt

log = logging.getLogger(__name__)

TCODE_LAG = {1: 0, 2: 1, 3: 2, 4: 0, 5: 1, 6: 2, 7: 2}
IMPUTE = ("drop-rows", "mean", "none")
RIDGE = 1e-8

_QUARTER = re.compile(r"^(\d{4})\s*[-:]?\s*Q([1-4])$", re.IGNORECASE)
_DATE_FORMATS = ("%Y-%m-%d", "%m/%d/%Y", "%Y-%m", "%Y/%m/%d", "%Y")


def _date_key(label: str):
    s = label.strip()
    m = _QUARTER.match(s)
    if m:
        return datetime(int(m.group(1)), 3 * int(m.group(2)) - 2, 1)
    for f in _DATE_FORMATS:
        try:
            return datetime.strptime(s, f)
        except ValueError:
            continue
    return None


def _check_dates_increasing(dates):
    keys = [_date_key(d) for d in dates]
    if all(k is not None for k in keys):
        bad = [dates[i + 1] for i in range(len(keys) - 1) if keys[i + 1] <= keys[i]]
    elif all(_is_float(d) for d in dates):
        vals = [float(d) for d in dates]
        bad = [dates[i + 1] for i in range(len(vals) - 1) if vals[i + 1] <= vals[i]]
    else:
        # unrecognized label format: only require distinct labels
        seen, bad = set(), []
        for d in dates:
            if d in seen:
                bad.append(d)
            seen.add(d)
    if bad:
        raise ValueError(f"dates must be strictly increasing; offending labels {bad[:5]}")


def _is_float(s):
    try:
        float(s)
    except ValueError:
        return False
    return True


@dataclass(frozen=True)
class RawSeriesTable:
    """
    Untransformed macro series.

    Parameters
    ----------
    values : array_like, shape (T, N)
        Levels; NaN marks a missing cell.
    tcodes : sequence of int
        One transformation code in 1..7 per column.
    names : sequence of str, optional
    dates : sequence of str, optional
        Strictly increasing row labels.
    """

    values: np.ndarray
    tcodes: tuple
    names: Optional[tuple] = None
    dates: Optional[tuple] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError("values must be a T x N matrix")
        if np.any(np.isinf(values)):
            raise ValueError("values contain infinite entries")
        T, N = values.shape
        codes = tuple(int(c) for c in self.tcodes)
        if len(codes) != N:
            raise ValueError(f"need {N} tcodes, got {len(codes)}")
        bad = [c for c in codes if c not in TCODE_LAG]
        if bad:
            raise ValueError(f"tcodes must lie in 1..7, got {sorted(set(bad))}")
        names = tuple(str(s) for s in self.names) if self.names is not None else tuple(f"x{j + 1}" for j in range(N))
        dates = tuple(str(s) for s in self.dates) if self.dates is not None else tuple(str(t) for t in range(T))
        if len(names) != N or len(dates) != T:
            raise ValueError("names must have N entries and dates T entries")
        _check_dates_increasing(dates)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "tcodes", codes)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "dates", dates)


def apply_tcode(series, code: int, dates=None) -> np.ndarray:
    """
    Transform one series by its FRED code. Leading positions lost to
    differencing become NaN, and missing inputs stay missing.

    Raises
    ------
    ValueError
        For an unknown code, or for nonpositive values under a log code
        (4 to 7); the message lists the offending dates.
    """
    x = np.asarray(series, dtype=float).ravel()
    code = int(code)
    if code not in TCODE_LAG:
        raise ValueError(f"tcode must lie in 1..7, got {code}")
    if code >= 4:
        bad = np.flatnonzero(~np.isnan(x) & (x <= 0))
        if bad.size:
            where = [dates[i] for i in bad] if dates is not None else bad.tolist()
            raise ValueError(f"tcode {code} needs positive values; nonpositive at {where}")
        with np.errstate(invalid="ignore", divide="ignore"):
            lx = np.log(x)
    out = np.full_like(x, np.nan)
    if code == 1:
        out[:] = x
    elif code == 2:
        out[1:] = np.diff(x)
    elif code == 3:
        out[2:] = np.diff(x, 2)
    elif code == 4:
        out[:] = lx
    elif code == 5:
        out[1:] = np.diff(lx)
    elif code == 6:
        out[2:] = np.diff(lx, 2)
    else:
        growth = np.full_like(x, np.nan)
        growth[1:] = x[1:] / x[:-1] - 1.0
        out[2:] = np.diff(growth[1:])
    return out


def invert_tcode(transformed, code: int, initial) -> np.ndarray:
    """
    Rebuild levels from a transformed series for codes 1, 2, 4 and 5.

    ``initial`` is the first level, which differencing discards.
    """
    z = np.asarray(transformed, dtype=float).ravel()
    code = int(code)
    if code == 1:
        return z.copy()
    if code == 4:
        return np.exp(z)
    if code == 2:
        return initial + np.concatenate([[0.0], np.cumsum(z[1:])])
    if code == 5:
        return initial * np.exp(np.concatenate([[0.0], np.cumsum(z[1:])]))
    raise ValueError(f"inversion implemented for codes 1, 2, 4, 5; got {code}")


class PreparedPanel(NamedTuple):
    """``(panel, manifest)`` pair returned by :func:`prepare_panel`."""

    panel: Panel
    manifest: dict


def transform_table(raw: RawSeriesTable) -> np.ndarray:
    """Apply every column's tcode; returns a T x N matrix with NaN gaps."""
    cols = []
    for j, code in enumerate(raw.tcodes):
        try:
            cols.append(apply_tcode(raw.values[:, j], code, raw.dates))
        except ValueError as exc:
            raise ValueError(f"series {raw.names[j]!r}: {exc}") from None
    return np.column_stack(cols)


def prepare_panel(raw: RawSeriesTable, standardize: bool = True, impute: str = "drop-rows") -> PreparedPanel:
    """
    Transform, trim, fill and optionally standardize a raw macro table.

    The first ``max_j lag(tcode_j)`` rows, which differencing leaves
    incomplete, are trimmed. Remaining gaps are handled by ``impute``:
    ``drop-rows`` removes incomplete rows, ``mean`` fills each gap with its
    column's observed mean, ``none`` raises if any gap is left.

    Returns
    -------
    PreparedPanel
        The panel plus a manifest with ``rows_in``, ``rows_trimmed``
        (all removed rows), ``rows_out``, ``leading_rows_trimmed``,
        ``rows_dropped`` and ``cells_imputed``.
    """
    if impute not in IMPUTE:
        raise ValueError(f"impute must be one of {IMPUTE}, got {impute!r}")
    X = transform_table(raw)
    T, N = X.shape
    lead = max(TCODE_LAG[c] for c in raw.tcodes)
    X = X[lead:]
    dates = list(raw.dates[lead:])
    complete_cols = int(np.sum(~np.isnan(X).any(axis=0)))
    if complete_cols < 2:
        raise ValueError(f"need at least 2 complete columns after transformation, found {complete_cols}")

    miss = np.isnan(X)
    dropped = 0
    imputed = 0
    if miss.any():
        if impute == "none":
            cells = [f"({dates[i]}, {raw.names[j]})" for i, j in np.argwhere(miss)[:20]]
            raise ValueError(f"{int(miss.sum())} missing cells remain with impute='none': {', '.join(cells)}")
        if impute == "drop-rows":
            keep = ~miss.any(axis=1)
            dropped = int(np.sum(~keep))
            X = X[keep]
            dates = [d for d, k in zip(dates, keep) if k]
        else:
            empty = np.flatnonzero(miss.all(axis=0))
            if empty.size:
                raise ValueError(f"cannot mean-impute all-missing columns {[raw.names[j] for j in empty]}")
            means = np.nanmean(X, axis=0)
            X = np.where(miss, means[None, :], X)
            imputed = int(miss.sum())
    if X.shape[0] < 2:
        raise ValueError("fewer than 2 rows remain after trimming")

    panel = Panel(X, tuple(dates), raw.names)
    if standardize:
        panel = panel.standardized()
    manifest = {
        "rows_in": T,
        "rows_trimmed": lead + dropped,
        "rows_out": panel.T,
        "leading_rows_trimmed": lead,
        "rows_dropped": dropped,
        "cells_imputed": imputed,
        "impute": impute,
        "standardize": bool(standardize),
    }
    return PreparedPanel(panel, manifest)


# ---------------------------------------------------------------------------
# forecasting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ForecastSpec:
    """
    Rolling-window diffusion-index forecast settings.

    ``target`` is a column index or name. ``first_target`` picks the first
    forecasted row (index or time label); by default the first origin is
    the earliest row with a full window behind it. ``n_factors=0`` gives
    the pure autoregressive benchmark.
    """

    target: Union[int, str] = 0
    window: int = 120
    n_lags: int = 4
    n_factors: int = 6
    factor_method: str = "CQFM"
    grid: QuantileGrid = field(default_factory=lambda: equally_spaced_grid(5))
    horizon: int = 1
    first_target: Optional[Union[int, str]] = None
    seed: int = 0
    config: Optional[CqfmConfig] = None
    standardize_window: bool = True

    def __post_init__(self):
        if self.horizon != 1:
            raise ValueError("only one-step-ahead forecasts (horizon=1) are supported")
        for name in ("window", "n_lags"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v}")
        if int(self.n_factors) != self.n_factors or self.n_factors < 0:
            raise ValueError(f"n_factors must be a nonnegative integer, got {self.n_factors}")
        if self.factor_method.upper() not in ("CQFM", "QFM", "PCA"):
            raise ValueError(f"unknown factor method {self.factor_method!r}")
        object.__setattr__(self, "factor_method", self.factor_method.upper())
        n_obs = self.window - self.n_lags
        n_par = 1 + self.n_lags + self.n_factors
        if n_obs < n_par:
            raise ValueError(
                f"window {self.window} leaves {n_obs} regression rows for {n_par} coefficients"
            )


@dataclass
class ForecastResult:
    origin_labels: list
    target_labels: list
    forecasts: np.ndarray
    realized: np.ndarray
    ridge_flags: np.ndarray
    rmse: float
    target_name: str = ""

    @property
    def errors(self) -> np.ndarray:
        return self.realized - self.forecasts

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["origin_date", "forecast", "realized", "error"])
            for lab, f, y, e in zip(self.origin_labels, self.forecasts, self.realized, self.errors):
                w.writerow([lab, fmt(f), fmt(y), fmt(e)])
            w.writerow(["RMSE", "", "", fmt(self.rmse)])


def _target_index(panel_names, N, target):
    if isinstance(target, str) and not target.lstrip("-").isdigit():
        if panel_names is None or target not in panel_names:
            raise ValueError(f"target {target!r} is not a column name")
        return panel_names.index(target)
    j = int(target)
    if not 0 <= j < N:
        raise ValueError(f"target index {j} out of range for {N} columns")
    return j


def _lstsq_with_ridge(X, y):
    p = X.shape[1]
    if np.linalg.matrix_rank(X) < p:
        beta = np.linalg.solve(X.T @ X + RIDGE * np.eye(p), X.T @ y)
        return beta, True
    return np.linalg.lstsq(X, y, rcond=None)[0], False


def forecast_origin(values, target: int, t: int, spec: ForecastSpec):
    """
    One-step forecast of ``values[t + 1, target]`` made at origin ``t``.

    Only rows ``t - window + 1 .. t`` are read, so anything dated after
    the origin cannot leak in.

    Returns
    -------
    (forecast, ridge_used)
    """
    values = np.asarray(values, dtype=float)
    start = t - spec.window + 1
    if start < 0:
        raise ValueError(f"origin {t} has only {t + 1} rows behind it; window is {spec.window}")
    W = values[start:t + 1]
    if not np.all(np.isfinite(W)):
        raise ValueError(f"window ending at row {t} contains non-finite values")
    y = W[:, target]
    L = spec.n_lags
    rows = np.arange(L - 1, spec.window - 1)
    lags = np.column_stack([y[rows - l] for l in range(L)])
    last_lags = np.array([y[-1 - l] for l in range(L)])
    X = np.column_stack([np.ones(rows.size), lags])
    x_new = np.concatenate([[1.0], last_lags])
    if spec.n_factors > 0:
        if spec.standardize_window:
            sd = W.std(axis=0)
            if np.any(sd == 0):
                raise ValueError(f"constant column in window ending at row {t}")
            Z = (W - W.mean(axis=0)) / sd
        else:
            Z = W
        config = replace(spec.config or CqfmConfig(), seed=spec.seed)
        fit = fit_factors(Panel(Z), spec.n_factors, spec.factor_method, spec.grid, config)
        F = fit.factors
        X = np.column_stack([X, F[rows]])
        x_new = np.concatenate([x_new, F[-1]])
    beta, ridge = _lstsq_with_ridge(X, y[rows + 1])
    return float(x_new @ beta), ridge


def _first_origin(panel: Panel, spec: ForecastSpec) -> int:
    if spec.first_target is None:
        return spec.window - 1
    ft = spec.first_target
    if isinstance(ft, str) and not ft.lstrip("-").isdigit():
        if panel.time_labels is None or ft not in panel.time_labels:
            raise ValueError(f"first target {ft!r} is not a time label of the panel")
        return panel.time_labels.index(ft) - 1
    return int(ft) - 1


def rolling_diffusion_forecast(panel: Panel, spec: ForecastSpec) -> ForecastResult:
    """
    Rolling one-step forecasts of one panel column.

    At each origin ``t`` factors are re-estimated on the trailing window
    (columns standardized within the window when
    ``spec.standardize_window``), the forecasting regression is fitted by
    least squares on the same window, and ``y_{t+1}`` is predicted. The
    origins run from the first one up to ``T - 2``.
    """
    T, N = panel.values.shape
    if spec.window + spec.n_lags + 1 > T:
        raise ValueError(f"window + n_lags + 1 = {spec.window + spec.n_lags + 1} exceeds T = {T}")
    j = _target_index(panel.var_names, N, spec.target)
    t0 = _first_origin(panel, spec)
    if t0 < spec.window - 1:
        raise ValueError(f"first origin {t0} leaves fewer than {spec.window} rows in the window")
    if t0 > T - 2:
        raise ValueError("first target lies beyond the end of the panel")
    if spec.n_factors >= min(spec.window, N):
        raise ValueError(f"n_factors {spec.n_factors} must be below min(window, N) = {min(spec.window, N)}")
    labels = panel.time_labels or tuple(str(i) for i in range(T))
    origins = range(t0, T - 1)
    fc = np.empty(len(origins))
    flags = np.zeros(len(origins), dtype=bool)
    for n, t in enumerate(origins):
        fc[n], flags[n] = forecast_origin(panel.values, j, t, spec)
    if flags.any():
        log.warning("ridge fallback used at %d forecast origins", int(flags.sum()))
    realized = panel.values[t0 + 1:, j].copy()
    rmse = float(np.sqrt(np.mean((realized - fc) ** 2)))
    name = panel.var_names[j] if panel.var_names else str(j)
    return ForecastResult(
        [labels[t] for t in origins], [labels[t + 1] for t in origins], fc, realized, flags, rmse, name
    )
