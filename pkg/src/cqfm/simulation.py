"""
Three-factor Monte-Carlo designs and the replication harness.

The factors follow independent AR(1) recursions with coefficients
0.8 / 0.5 / 0.2 and N(0, 1) innovations; loadings are i.i.d. N(0, 1).
Three error structures are available: i.i.d., heteroskedastic (errors
scaled by ``2 + cos(2 pi lambda4 F4)``) and AR(1) errors.
"""

from __future__ import annotations

import csv
import logging
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .core import CqfmConfig, Panel, QuantileGrid, equally_spaced_grid
from .distributions import ErrorSpec
from .estimator import fit_factors
from .metrics import adjusted_r2_span, common_component_mse
from .rng import make_generator
from .selection import select_num_factors

log = logging.getLogger(__name__)

VARIANTS = ("iid", "heteroskedastic", "ar1")
TASKS = ("estimate", "select_rank")
BURN_IN = 100


@dataclass(frozen=True)
class DgpSpec:
    error: ErrorSpec = field(default_factory=ErrorSpec)
    variant: str = "iid"
    ar_factor_coeffs: tuple = (0.8, 0.5, 0.2)
    ar_error_coeff: float = 0.5
    n_factors: int = 3

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        coeffs = tuple(float(c) for c in self.ar_factor_coeffs)
        object.__setattr__(self, "ar_factor_coeffs", coeffs)
        if len(coeffs) != self.n_factors:
            raise ValueError("need one AR coefficient per factor")
        if any(abs(c) >= 1 for c in coeffs + (self.ar_error_coeff,)):
            raise ValueError("AR coefficients must lie in (-1, 1)")


class SimulatedPanel(NamedTuple):
    panel: Panel
    factors: np.ndarray
    loadings: np.ndarray


def heteroskedastic_scale(lam4, f4):
    """Error multiplier ``2 + cos(2 pi lambda4_i F4_t)`` as a T x N matrix."""
    return 2.0 + np.cos(2 * np.pi * np.outer(f4, lam4))


def _ar1(rng, coeffs, T, innov=None):
    coeffs = np.asarray(coeffs)
    n = T + BURN_IN
    e = rng.standard_normal((n, coeffs.size)) if innov is None else innov
    x = np.zeros_like(e)
    x[0] = e[0]
    for t in range(1, n):
        x[t] = coeffs * x[t - 1] + e[t]
    return x[BURN_IN:]


def simulate_from(spec: DgpSpec, T: int, N: int, rng: np.random.Generator) -> SimulatedPanel:
    F = _ar1(rng, spec.ar_factor_coeffs, T)
    L = rng.standard_normal((N, spec.n_factors))
    if spec.variant == "ar1":
        u = spec.error.draw(rng, (T + BURN_IN, N))
        eps = _ar1(rng, np.full(N, spec.ar_error_coeff), T, innov=u)
    else:
        eps = spec.error.draw(rng, (T, N))
        if spec.variant == "heteroskedastic":
            lam4 = rng.standard_normal(N)
            f4 = rng.standard_normal(T)
            eps = heteroskedastic_scale(lam4, f4) * eps
    return SimulatedPanel(Panel(F @ L.T + eps), F, L)


def simulate_panel(spec: DgpSpec, T: int, N: int, rng_seed: int) -> SimulatedPanel:
    """Simulate one T x N panel with its true factors and loadings."""
    if T < 10 or N < 10:
        raise ValueError(f"need T, N >= 10, got ({T}, {N})")
    return simulate_from(spec, T, N, make_generator(rng_seed))


# ---------------------------------------------------------------------------
# replication harness
# ---------------------------------------------------------------------------


@dataclass
class SimReport:
    """
    Aggregated Monte-Carlo metrics.

    ``per_cell`` maps ``(method, T, N, error_family, variant)`` to a dict of
    metric name -> mean over successful replications; ``records`` keeps the
    per-replication metrics and ``failures`` the failed replication count.
    """

    per_cell: dict
    replications: int
    seeds: list
    failures: dict
    records: list = field(default_factory=list)

    def to_rows(self):
        rows = []
        for key in sorted(self.per_cell):
            method, T, N, family, variant = key
            for metric, value in self.per_cell[key].items():
                rows.append(
                    {
                        "method": method,
                        "T": T,
                        "N": N,
                        "error_family": family,
                        "variant": variant,
                        "metric": metric,
                        "value": value,
                        "replications": self.replications,
                        "failures": self.failures.get(key, 0),
                    }
                )
        return rows

    def to_csv(self, path):
        cols = ["method", "T", "N", "error_family", "variant", "metric", "value", "replications", "failures"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for row in self.to_rows():
                row["value"] = format(row["value"], ".17g")
                w.writerow([row[c] for c in cols])


def _one_replication(job):
    spec, T, N, methods, grid, rep, seed, tasks, r_true, r_max, variant_pen, config = job
    sim = simulate_from(spec, T, N, make_generator(seed, T, N))
    out = []
    for method in methods:
        rec = {"method": method, "T": T, "N": N, "rep": rep, "seed": seed}
        try:
            cfg = replace(config, seed=seed)
            if "estimate" in tasks:
                fit = fit_factors(sim.panel, r_true, method, grid, cfg)
                r2 = adjusted_r2_span(sim.factors, fit.factors)
                for j, v in enumerate(r2, 1):
                    rec[f"adj_r2_f{j}"] = float(v)
                rec["mse"] = common_component_mse(sim.factors, sim.loadings, fit.factors, fit.loadings)
            if "select_rank" in tasks:
                sel_grid = QuantileGrid([0.5]) if method == "QFM" else grid
                rep_sel = select_num_factors(sim.panel, r_max, sel_grid, cfg, variant_pen, method=method)
                rec["chosen_rank"] = float(rep_sel.chosen_rank)
                rec["prob_correct"] = float(rep_sel.chosen_rank == r_true)
            rec["ok"] = True
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            log.warning("replication %d of %s at (%d, %d) failed: %s", rep, method, T, N, exc)
            rec["ok"] = False
        out.append(rec)
    return out


def run_replications(
    spec: DgpSpec,
    sizes: Sequence[tuple],
    methods: Sequence[str] = ("CQFM", "QFM", "PCA"),
    grid: Optional[QuantileGrid] = None,
    reps: int = 20,
    base_seed: int = 0,
    tasks: Sequence[str] = ("estimate",),
    r_max: int = 8,
    penalty: str = "V1",
    config: Optional[CqfmConfig] = None,
    workers: int = 1,
) -> SimReport:
    """
    Simulate ``reps`` panels per (T, N) cell and evaluate every method on
    the identical panel. Replication ``k`` uses seed ``base_seed + k`` with
    the cell dimensions as a substream key.
    """
    if int(reps) != reps or reps < 1:
        raise ValueError("reps must be a positive integer")
    methods = [m.upper() for m in methods]
    for m in methods:
        if m not in ("CQFM", "QFM", "PCA"):
            raise ValueError(f"unknown method {m!r}")
    for t in tasks:
        if t not in TASKS:
            raise ValueError(f"unknown task {t!r}; choose from {TASKS}")
    grid = grid or equally_spaced_grid(5)
    config = config or CqfmConfig()
    seeds = [base_seed + k for k in range(reps)]
    jobs = [
        (spec, int(T), int(N), methods, grid, k, seeds[k], tuple(tasks), spec.n_factors, r_max, penalty, config)
        for T, N in sizes
        for k in range(reps)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_one_replication, jobs))
    else:
        results = [_one_replication(j) for j in jobs]

    records = [rec for batch in results for rec in batch]
    records.sort(key=lambda r: (r["method"], r["T"], r["N"], r["rep"]))
    family, variant = spec.error.family, spec.variant
    grouped = defaultdict(list)
    failures = defaultdict(int)
    for rec in records:
        key = (rec["method"], rec["T"], rec["N"], family, variant)
        if rec["ok"]:
            grouped[key].append(rec)
        else:
            failures[key] += 1
    per_cell = {}
    skip = {"method", "T", "N", "rep", "seed", "ok"}
    for T, N in sizes:
        for m in methods:
            key = (m, int(T), int(N), family, variant)
            recs = grouped.get(key, [])
            metrics = [k for k in (recs[0] if recs else {}) if k not in skip]
            per_cell[key] = {k: float(np.mean([r[k] for r in recs])) for k in metrics}
            failures.setdefault(key, 0)
    return SimReport(per_cell, reps, seeds, dict(failures), records)
