"""
Core data types and the composite check-loss objective.

Every estimator in the package consumes a :class:`Panel` and a
:class:`QuantileGrid` and produces a :class:`FactorFit`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

METHODS = ("CQFM", "QFM", "PCA")
INITS = ("seeded-random", "pca")


class DegeneracyError(ArithmeticError):
    """Raised when a numerical step hits a singular or degenerate matrix."""


def _as_finite(x, name, ndim=None):
    arr = np.asarray(x, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class Panel:
    """
    A balanced T x N panel (rows are time periods, columns are units).

    Parameters
    ----------
    values : array_like, shape (T, N)
        Observations. Must be finite; resolve missing data first.
    time_labels : sequence of str, optional
        One label per row.
    var_names : sequence of str, optional
        One name per column.
    """

    values: np.ndarray
    time_labels: Optional[tuple] = None
    var_names: Optional[tuple] = None

    def __post_init__(self):
        values = _as_finite(self.values, "panel values", ndim=2)
        if values.shape[0] < 2 or values.shape[1] < 2:
            raise ValueError(f"panel needs T >= 2 and N >= 2, got shape {values.shape}")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.time_labels is not None:
            labels = tuple(str(s) for s in self.time_labels)
            if len(labels) != values.shape[0]:
                raise ValueError("time_labels length must equal T")
            object.__setattr__(self, "time_labels", labels)
        if self.var_names is not None:
            names = tuple(str(s) for s in self.var_names)
            if len(names) != values.shape[1]:
                raise ValueError("var_names length must equal N")
            object.__setattr__(self, "var_names", names)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def N(self) -> int:
        return self.values.shape[1]

    def standardized(self) -> "Panel":
        """Return a copy with every column scaled to mean 0 and sd 1."""
        sd = self.values.std(axis=0)
        if np.any(sd == 0):
            bad = [int(j) for j in np.flatnonzero(sd == 0)]
            raise ValueError(f"cannot standardize constant columns {bad}")
        z = (self.values - self.values.mean(axis=0)) / sd
        return replace(self, values=z)


@dataclass(frozen=True)
class QuantileGrid:
    """Strictly increasing quantile positions in (0, 1)."""

    taus: np.ndarray

    def __post_init__(self):
        taus = _as_finite(self.taus, "taus", ndim=1)
        if taus.size < 1:
            raise ValueError("a quantile grid needs at least one position")
        if np.any(taus <= 0) or np.any(taus >= 1):
            raise ValueError(f"quantile positions must lie in (0, 1), got {taus.tolist()}")
        if np.any(np.diff(taus) <= 0):
            raise ValueError("quantile positions must be strictly increasing")
        taus = taus.copy()
        taus.setflags(write=False)
        object.__setattr__(self, "taus", taus)

    @property
    def K(self) -> int:
        return self.taus.size

    def __len__(self):
        return self.taus.size

    def __eq__(self, other):
        return isinstance(other, QuantileGrid) and np.array_equal(self.taus, other.taus)

    def __hash__(self):
        return hash(tuple(self.taus.tolist()))


def equally_spaced_grid(K: int) -> QuantileGrid:
    """Quantile positions k / (K + 1) for k = 1..K."""
    if int(K) != K or K < 1:
        raise ValueError(f"K must be a positive integer, got {K}")
    K = int(K)
    return QuantileGrid(np.arange(1, K + 1) / (K + 1))


@dataclass(frozen=True)
class CqfmConfig:
    """
    Algorithm controls for the alternating CQFM estimator.

    ``inner_tol`` bounds the max absolute coefficient change of the MM
    solver; ``outer_tol`` bounds the relative change of the objective
    between full cycles.
    """

    mm_epsilon: float = 1e-6
    inner_tol: float = 1e-3
    outer_tol: float = 1e-6
    max_outer_iters: int = 1000
    max_inner_iters: int = 200
    init: str = "seeded-random"
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        for name in ("mm_epsilon", "inner_tol", "outer_tol"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive finite number, got {v}")
        for name in ("max_outer_iters", "max_inner_iters", "workers"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be an integer >= 1, got {v}")
        if self.init not in INITS:
            raise ValueError(f"init must be one of {INITS}, got {self.init!r}")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")


@dataclass
class FactorFit:
    """
    Estimated factors (T x r), loadings (N x r) and quantile intercepts (K).

    ``loss_trace`` holds the composite objective after each full cycle.
    PCA fits carry zero intercepts and a single-entry trace.
    """

    factors: np.ndarray
    loadings: np.ndarray
    intercepts: np.ndarray
    loss_trace: list = field(default_factory=list)
    converged: bool = True
    iterations: int = 0
    method_tag: str = "CQFM"
    degenerate: bool = False

    def __post_init__(self):
        self.factors = np.atleast_2d(np.asarray(self.factors, dtype=float))
        self.loadings = np.atleast_2d(np.asarray(self.loadings, dtype=float))
        self.intercepts = np.atleast_1d(np.asarray(self.intercepts, dtype=float))
        if self.factors.shape[1] != self.loadings.shape[1]:
            raise ValueError("factors and loadings must have the same number of columns")
        if self.method_tag not in METHODS:
            raise ValueError(f"method_tag must be one of {METHODS}")

    @property
    def rank(self) -> int:
        return self.factors.shape[1]

    def common_component(self) -> np.ndarray:
        return self.factors @ self.loadings.T


def check_loss(v, tau):
    """Elementwise check function v * (tau - 1{v <= 0})."""
    v = np.asarray(v, dtype=float)
    return v * (tau - (v <= 0))


def composite_check_loss(u: float, grid: QuantileGrid, offsets: Sequence[float]) -> float:
    """
    Sum over the grid of check losses of ``u - offsets[k]`` at ``taus[k]``.

    Raises
    ------
    ValueError
        If ``offsets`` does not have one entry per quantile position.
    """
    offsets = np.asarray(offsets, dtype=float).ravel()
    if offsets.size != grid.K:
        raise ValueError(f"expected {grid.K} offsets, got {offsets.size}")
    return float(np.sum(check_loss(u - offsets, grid.taus)))


def panel_loss(Y: np.ndarray, common: np.ndarray, intercepts: np.ndarray, taus: np.ndarray) -> float:
    """Composite check loss of ``Y - common`` averaged over the NT cells."""
    resid = Y - common
    total = 0.0
    for b, tau in zip(intercepts, taus):
        total += check_loss(resid - b, tau).sum()
    return total / Y.size


def objective(panel: Panel, fit: FactorFit, grid: QuantileGrid) -> float:
    """
    The composite quantile objective of ``fit`` on ``panel``::

        (1/NT) sum_k sum_i sum_t rho_{tau_k}(Y_it - b_k - lambda_i' F_t)
    """
    T, N = panel.values.shape
    if fit.factors.shape[0] != T or fit.loadings.shape[0] != N:
        raise ValueError(
            f"fit dimensions ({fit.factors.shape[0]}, {fit.loadings.shape[0]}) "
            f"do not match panel ({T}, {N})"
        )
    if fit.intercepts.size != grid.K:
        raise ValueError(f"fit has {fit.intercepts.size} intercepts but grid has K={grid.K}")
    return panel_loss(panel.values, fit.common_component(), fit.intercepts, grid.taus)
