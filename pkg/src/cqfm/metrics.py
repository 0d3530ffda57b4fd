"""Evaluation metrics comparing estimated factors with the truth."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .core import DegeneracyError, _as_finite


def common_component_mse(F0, L0, Fhat, Lhat) -> float:
    """
    Mean squared difference between the true and estimated common components,
    ``(1/NT) sum_it (lambda0_i' F0_t - lambdahat_i' Fhat_t)^2``.

    The estimated pair may have a different number of columns than the truth.
    """
    F0, L0 = _as_finite(F0, "F0", 2), _as_finite(L0, "L0", 2)
    Fhat, Lhat = _as_finite(Fhat, "Fhat", 2), _as_finite(Lhat, "Lhat", 2)
    if F0.shape[0] != Fhat.shape[0] or L0.shape[0] != Lhat.shape[0]:
        raise ValueError(
            f"row counts disagree: F0 {F0.shape}, Fhat {Fhat.shape}, L0 {L0.shape}, Lhat {Lhat.shape}"
        )
    if F0.shape[1] != L0.shape[1] or Fhat.shape[1] != Lhat.shape[1]:
        raise ValueError("factor and loading column counts disagree")
    diff = F0 @ L0.T - Fhat @ Lhat.T
    return float(np.mean(diff**2))


class AdjR2Result(NamedTuple):
    values: np.ndarray
    dropped: tuple


def _independent_columns(X, tol=1e-10):
    """Greedy left-to-right selection of linearly independent columns."""
    keep = []
    Q = np.zeros((X.shape[0], 0))
    for j in range(X.shape[1]):
        x = X[:, j]
        resid = x - Q @ (Q.T @ x)
        norm = np.linalg.norm(resid)
        if norm > tol * max(np.linalg.norm(x), 1.0):
            keep.append(j)
            Q = np.column_stack([Q, resid / norm])
    return keep


def adjusted_r2_span(F0, Fhat, return_info=False):
    """
    Adjusted R^2 of regressing each true factor on an intercept plus all
    estimated factors.

    Collinear columns of ``Fhat`` are dropped left to right before fitting;
    pass ``return_info=True`` to get the dropped column indices as well.
    """
    F0 = _as_finite(F0, "F0", 2)
    Fhat = _as_finite(Fhat, "Fhat", 2)
    T = F0.shape[0]
    if Fhat.shape[0] != T:
        raise ValueError("F0 and Fhat must have the same number of rows")
    X = np.column_stack([np.ones(T), Fhat])
    keep = _independent_columns(X)
    dropped = tuple(j - 1 for j in range(X.shape[1]) if j not in keep)
    X = X[:, keep]
    p = X.shape[1] - 1
    if T <= p + 1:
        raise ValueError(f"need T > r + 1, got T={T}, r={p}")
    coef, *_ = np.linalg.lstsq(X, F0, rcond=None)
    resid = F0 - X @ coef
    ssr = np.sum(resid**2, axis=0)
    sst = np.sum((F0 - F0.mean(axis=0)) ** 2, axis=0)
    r2 = 1.0 - ssr / sst
    adj = 1.0 - (1.0 - r2) * (T - 1) / (T - p - 1)
    if return_info:
        return AdjR2Result(adj, dropped)
    return adj


def align_to_truth(Fhat, F0) -> np.ndarray:
    """
    Least-squares matrix ``A = (Fhat'Fhat)^{-1} Fhat'F0`` so that ``Fhat @ A``
    best approximates ``F0``. For reporting only.
    """
    Fhat = _as_finite(Fhat, "Fhat", 2)
    F0 = _as_finite(F0, "F0", 2)
    if Fhat.shape != F0.shape:
        raise ValueError(f"shape mismatch: {Fhat.shape} vs {F0.shape}")
    G = Fhat.T @ Fhat
    if np.linalg.matrix_rank(G) < G.shape[0]:
        raise DegeneracyError("Fhat'Fhat is singular")
    return np.linalg.solve(G, Fhat.T @ F0)
