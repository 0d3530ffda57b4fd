"""
Majorization-minimization (MM) solver for stacked quantile regressions.

Each iteration replaces the check loss by the Hunter-Lange quadratic
majorizer of its epsilon-perturbed version, which turns the update into a
weighted least-squares solve with row weights ``1 / (eps + |r|)`` and a
linear shift ``2 tau - 1``.

With a fixed small epsilon the MM path can stall next to a data point
whose residual is nearly zero: its weight ``1 / eps`` pins the fit there
and the steps fall below the tolerance well away from the minimizer. The
optional polish step therefore moves to the basic solution through the
``p`` smallest residuals and then runs exact vertex-exchange descent on the
check loss, which stops at a point satisfying the subgradient optimality
condition.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import CqfmConfig, check_loss

RIDGE = 1e-10


@dataclass(frozen=True)
class StackedQrProblem:
    """
    Rows ``m`` of a (composite) quantile regression: minimize over ``beta``
    ``sum_m rho_{tau_m}(response_m - offset_m - design_m' beta)``.
    """

    design: np.ndarray
    response: np.ndarray
    tau_of_row: np.ndarray
    offset_of_row: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.design, dtype=float))
        M = X.shape[0]
        y = np.asarray(self.response, dtype=float).ravel()
        tau = np.broadcast_to(np.asarray(self.tau_of_row, dtype=float), (M,)).copy()
        off = np.broadcast_to(np.asarray(self.offset_of_row, dtype=float), (M,)).copy()
        if M < 1 or X.shape[1] < 1:
            raise ValueError("problem needs at least one row and one column")
        if y.size != M:
            raise ValueError(f"response has {y.size} entries for {M} design rows")
        if np.any(tau <= 0) or np.any(tau >= 1):
            raise ValueError("tau_of_row entries must lie in (0, 1)")
        for arr in (X, y, off):
            if not np.all(np.isfinite(arr)):
                raise ValueError("problem contains non-finite entries")
        object.__setattr__(self, "design", X)
        object.__setattr__(self, "response", y)
        object.__setattr__(self, "tau_of_row", tau)
        object.__setattr__(self, "offset_of_row", off)

    def loss(self, beta) -> float:
        r = self.response - self.offset_of_row - self.design @ beta
        return float(check_loss(r, self.tau_of_row).sum())

    def perturbed_loss(self, beta, eps) -> float:
        r = self.response - self.offset_of_row - self.design @ beta
        return float(np.sum(check_loss(r, self.tau_of_row) - 0.5 * eps * np.log(eps + np.abs(r))))


@dataclass
class MMSolution:
    coef: np.ndarray
    converged: bool
    iterations: int
    degenerate: bool = False
    loss: float = math.nan
    perturbed_trace: list = field(default_factory=list)


def _solve_spd(A, b):
    try:
        return np.linalg.solve(A, b), False
    except np.linalg.LinAlgError:
        pass
    # relative ridge: MM weights reach 1/eps, so an absolute one is invisible
    p = A.shape[-1]
    scale = max(1.0, float(np.trace(A)) / p)
    try:
        return np.linalg.solve(A + RIDGE * scale * np.eye(p), b), True
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(A, b, rcond=None)[0], True


def _settled(step, prev_step, tol):
    # A residual sitting exactly at zero gets weight 1/eps, and the iterate
    # leaves it with geometrically growing steps that start near eps. A
    # small step only signals convergence once steps have stopped growing.
    return (step < tol) & (step <= prev_step)


def mm_quantile_solve(
    problem: StackedQrProblem,
    start=None,
    config: Optional[CqfmConfig] = None,
    polish: bool = True,
) -> MMSolution:
    """
    Minimize the stacked check loss of ``problem`` by MM.

    Stops when the max absolute coefficient change falls below
    ``config.inner_tol`` and is no larger than the previous change. The returned coefficients are the iterate with the
    lowest true check loss seen (the start included), so the loss never
    exceeds the loss at ``start``.
    """
    config = config or CqfmConfig()
    eps = config.mm_epsilon
    X = problem.design
    y = problem.response - problem.offset_of_row
    shift = X.T @ (2.0 * problem.tau_of_row - 1.0)
    p = X.shape[1]
    beta = np.zeros(p) if start is None else np.asarray(start, dtype=float).copy()
    if beta.shape != (p,):
        raise ValueError(f"start must have length {p}")

    best, best_loss = beta.copy(), problem.loss(beta)
    trace = [problem.perturbed_loss(beta, eps)]
    degenerate = converged = False
    it = 0
    prev_step = 0.0
    for it in range(1, config.max_inner_iters + 1):
        r = y - X @ beta
        w = 1.0 / (eps + np.abs(r))
        A = X.T @ (w[:, None] * X)
        new, singular = _solve_spd(A, X.T @ (w * y) + shift)
        degenerate |= singular
        step = np.max(np.abs(new - beta))
        beta = new
        trace.append(problem.perturbed_loss(beta, eps))
        cur = problem.loss(beta)
        if cur < best_loss:
            best, best_loss = beta.copy(), cur
        if _settled(step, prev_step, config.inner_tol):
            converged = True
            break
        prev_step = step

    if polish:
        cand, cand_loss = vertex_descent(X, y, problem.tau_of_row, best)
        if cand_loss < best_loss:
            best, best_loss = cand, cand_loss
    return MMSolution(best, converged, it, degenerate, best_loss, trace)


def _basis_rows(X, r):
    """``p`` rows with the smallest ``|r|`` whose design rows are independent."""
    p = X.shape[1]
    rows = []
    for m in np.argsort(np.abs(r), kind="stable"):
        cand = rows + [int(m)]
        if np.linalg.matrix_rank(X[cand]) == len(cand):
            rows = cand
            if len(rows) == p:
                return rows
    return None


def _edge_slopes(r, A, tau, zero):
    """
    One-sided derivatives of ``sum_m rho(r_m - t A[m, d])`` at ``t = 0`` for
    every direction ``d`` (columns of ``A``); residuals within ``zero`` of
    zero count as sitting on their kink.
    """
    tau = tau[:, None]
    on_kink = (np.abs(r) <= zero)[:, None]
    rate = np.where(r[:, None] > 0, -tau * A, (1.0 - tau) * A)
    kink = np.where(A > 0, (1.0 - tau) * A, -tau * A)
    return np.where(on_kink, kink, rate).sum(axis=0)


def vertex_descent(X, z, tau, beta, max_steps: Optional[int] = None):
    """
    Exact descent for ``sum_m rho_{tau_m}(z_m - X_m' beta)`` over basic
    solutions.

    Starting from the basic solution through the ``p`` smallest residuals
    at ``beta``, each step frees one basis row, moves along the edge with
    the most negative directional derivative to the loss-minimizing
    breakpoint, and swaps the row met there into the basis. It stops when
    no edge descends.

    Returns
    -------
    (coef, loss)
        ``beta`` itself is returned unchanged when no basis exists or the
        descent ends above its loss.
    """
    X = np.asarray(X, dtype=float)
    z = np.asarray(z, dtype=float)
    tau = np.broadcast_to(np.asarray(tau, dtype=float), z.shape)
    M, p = X.shape
    start_loss = float(check_loss(z - X @ beta, tau).sum())
    if M < p:
        return beta, start_loss
    basis = _basis_rows(X, z - X @ beta)
    if basis is None:
        return beta, start_loss
    zero = 1e-12 * max(1.0, float(np.max(np.abs(z))))
    cur = np.linalg.solve(X[basis], z[basis])
    r = z - X @ cur
    loss = float(check_loss(r, tau).sum())
    for _ in range(max_steps or 20 * M):
        H = np.linalg.inv(X[basis])
        # column 2k + 0/1: push basis row k to a negative / positive residual
        D = np.repeat(H, 2, axis=1) * np.tile([1.0, -1.0], p)
        A = X @ D
        A[basis] = 0.0
        slopes = _edge_slopes(r, A, tau, zero)
        sgn = np.tile([1.0, -1.0], p)
        bt = tau[np.repeat(basis, 2)]
        slopes += np.where(sgn > 0, 1.0 - bt, bt)
        e = int(np.argmin(slopes))
        if slopes[e] >= -1e-12 * max(1.0, loss):
            break
        a = A[:, e]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where((a != 0) & (np.abs(r) > zero), r / a, np.inf)
        ahead = np.flatnonzero((t > 0) & np.isfinite(t))
        if ahead.size == 0:
            break
        ahead = ahead[np.argsort(t[ahead], kind="stable")]
        slope = slopes[e]
        enter = None
        for m in ahead:
            slope += abs(a[m])
            if slope >= 0:
                enter = int(m)
                break
        if enter is None:
            break
        new = cur + t[enter] * D[:, e]
        new_r = z - X @ new
        new_loss = float(check_loss(new_r, tau).sum())
        if not new_loss < loss:
            break
        basis[e // 2] = enter
        cur, r, loss = new, new_r, new_loss
    if loss < start_loss:
        return cur, loss
    return beta, start_loss


def sample_quantile_minimizer(residuals, tau: float) -> float:
    """
    Closed-form minimizer of ``sum_m rho_tau(e_m - b)``: the order statistic
    of rank ``ceil(tau M)`` (the lower end of the minimizer interval).
    """
    e = np.asarray(residuals, dtype=float).ravel()
    if e.size == 0:
        raise ValueError("residuals must be non-empty")
    if not 0 < tau < 1:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    return float(_order_stats(np.sort(e), np.array([tau]))[0])


def _order_stats(sorted_e, taus):
    M = sorted_e.size
    # guard against tau*M landing a hair above an integer
    ranks = np.ceil(taus * M - 1e-9 * M).astype(int)
    ranks = np.clip(ranks, 1, M)
    return sorted_e[ranks - 1]


def intercept_update(residuals, taus) -> np.ndarray:
    """Exact intercept update for every quantile position at once."""
    return _order_stats(np.sort(np.asarray(residuals, dtype=float).ravel()), np.asarray(taus))


# ---------------------------------------------------------------------------
# batched solver used by the alternating estimator
# ---------------------------------------------------------------------------


@dataclass
class BatchSolution:
    coef: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray
    degenerate: bool


# The batched kernels reduce row by row with numpy sums instead of calling
# BLAS on the whole (B, M) block: BLAS blocking depends on B, and results
# must not change when the problems are split across workers.


def _fitted(beta, X):
    """``beta @ X.T`` computed so that every row is independent of B."""
    out = beta[:, 0, None] * X[None, :, 0]
    for j in range(1, X.shape[1]):
        out += beta[:, j, None] * X[None, :, j]
    return out


def _gram(w, X):
    """Stack of ``X' diag(w_b) X`` for every row ``w_b`` of ``w``."""
    p = X.shape[1]
    A = np.empty((w.shape[0], p, p))
    for j in range(p):
        for k in range(j, p):
            A[:, j, k] = A[:, k, j] = (w * (X[:, j] * X[:, k])).sum(axis=1)
    return A


def _cross(w, X):
    return np.column_stack([(w * X[:, j]).sum(axis=1) for j in range(X.shape[1])])


def _batch_loss(Y, offsets, taus, fitted):
    R = Y - fitted
    total = np.zeros(Y.shape[0])
    for o, tau in zip(offsets, taus):
        total += check_loss(R - o, tau).sum(axis=1)
    return total


def _solve_batch(A, rhs):
    try:
        return np.linalg.solve(A, rhs[..., None])[..., 0], False
    except np.linalg.LinAlgError:
        out = np.empty_like(rhs)
        for j in range(A.shape[0]):
            out[j], _ = _solve_spd(A[j], rhs[j])
        return out, True


def _mm_chunk(X, Y, offsets, taus, start, config, polish):
    eps, tol = config.mm_epsilon, config.inner_tol
    B, M = Y.shape
    p = X.shape[1]
    shift = X.sum(axis=0) * np.sum(2.0 * taus - 1.0)
    beta = start.copy()
    best = beta.copy()
    best_loss = _batch_loss(Y, offsets, taus, _fitted(beta, X))
    converged = np.zeros(B, dtype=bool)
    iterations = np.zeros(B, dtype=int)
    degenerate = False
    active = np.arange(B)
    prev_step = np.zeros(B)
    for _ in range(config.max_inner_iters):
        if active.size == 0:
            break
        Ya, ba = Y[active], beta[active]
        base = Ya - _fitted(ba, X)
        wsum = np.zeros_like(base)
        wy = np.zeros_like(base)
        for o in offsets:
            w = 1.0 / (eps + np.abs(base - o))
            wsum += w
            wy += w * (Ya - o)
        A = _gram(wsum, X)
        rhs = _cross(wy, X) + shift
        new, singular = _solve_batch(A, rhs)
        degenerate |= singular
        step = np.max(np.abs(new - ba), axis=1)
        beta[active] = new
        iterations[active] += 1
        cur = _batch_loss(Ya, offsets, taus, _fitted(new, X))
        better = cur < best_loss[active]
        idx = active[better]
        best[idx] = new[better]
        best_loss[idx] = cur[better]
        done = _settled(step, prev_step[active], tol)
        prev_step[active] = step
        converged[active[done]] = True
        active = active[~done]

    if polish:
        best, best_loss = _polish(X, Y, offsets, taus, best, best_loss)
    return best, converged, iterations, degenerate


def _polish(X, Y, offsets, taus, best, best_loss):
    K = offsets.size
    design = np.repeat(X, K, axis=0)
    tau_rows = np.tile(taus, X.shape[0])
    best = best.copy()
    best_loss = best_loss.copy()
    for b in range(Y.shape[0]):
        z = np.repeat(Y[b], K) - np.tile(offsets, X.shape[0])
        cand, cand_loss = vertex_descent(design, z, tau_rows, best[b])
        if cand_loss < best_loss[b]:
            best[b], best_loss[b] = cand, cand_loss
    return best, best_loss


def mm_solve_shared_design(
    X, Y, offsets, taus, start, config: CqfmConfig, polish: bool = True, workers: int = 1
) -> BatchSolution:
    """
    Solve ``B`` independent composite quantile regressions sharing one design.

    Problem ``b`` has rows ``(m, k)`` with regressor ``X[m]``, response
    ``Y[b, m]``, offset ``offsets[k]`` and quantile ``taus[k]``; this is the
    shape of both the per-period factor update and the per-unit loading
    update. Each problem stops on its own coefficient-change criterion.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    offsets = np.asarray(offsets, dtype=float)
    taus = np.asarray(taus, dtype=float)
    start = np.asarray(start, dtype=float)
    B = Y.shape[0]
    if workers <= 1 or B < 2:
        coef, conv, its, deg = _mm_chunk(X, Y, offsets, taus, start, config, polish)
        return BatchSolution(coef, conv, its, deg)

    bounds = np.linspace(0, B, min(workers, B) + 1).astype(int)
    chunks = [(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        parts = list(
            pool.map(
                lambda ab: _mm_chunk(X, Y[ab[0]:ab[1]], offsets, taus, start[ab[0]:ab[1]], config, polish),
                chunks,
            )
        )
    return BatchSolution(
        np.concatenate([q[0] for q in parts]),
        np.concatenate([q[1] for q in parts]),
        np.concatenate([q[2] for q in parts]),
        any(q[3] for q in parts),
    )
