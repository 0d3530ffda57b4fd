"""
Command-line interface.

Subcommands: ``fit``, ``select``, ``simulate``, ``transform`` and
``forecast``. Settings come from flags, then from an optional JSON file
given with ``--config``, then from built-in defaults. Every run writes
CSV outputs plus a JSON-lines manifest with one line per output file.

Exit codes: 0 on success, 2 on argument or input errors, 3 on numerical
failures (singular or degenerate matrices).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .core import CqfmConfig, QuantileGrid, equally_spaced_grid, objective
from .distributions import FAMILIES, ErrorSpec
from .estimator import fit_cqfm, fit_factors
from .io import fmt, read_fred_csv, read_panel_csv, write_matrix_csv, write_panel_csv
from .macro import IMPUTE, ForecastSpec, prepare_panel, rolling_diffusion_forecast
from .simulation import TASKS, VARIANTS, DgpSpec, run_replications

log = logging.getLogger("cqfm")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

COMMON_DEFAULTS = {
    "K": None,
    "taus": None,
    "seed": 0,
    "init": "seeded-random",
    "tol_outer": 1e-6,
    "tol_inner": 1e-3,
    "max_iters": 1000,
    "max_inner_iters": 200,
    "mm_epsilon": 1e-6,
    "workers": 1,
}

DEFAULTS = {
    "fit": {**COMMON_DEFAULTS, "input": None, "rank": None, "method": "cqfm", "output_dir": "."},
    "select": {
        **COMMON_DEFAULTS,
        "input": None,
        "rmax": 8,
        "penalty": "v1",
        "standardize": False,
        "method": "cqfm",
        "output_dir": ".",
    },
    "simulate": {
        **COMMON_DEFAULTS,
        "dgp": "iid",
        "error": "skew-normal",
        "sizes": "50x100",
        "reps": 20,
        "methods": "cqfm,qfm,pca",
        "tasks": "estimate",
        "base_seed": 0,
        "rmax": 8,
        "penalty": "v1",
        "output": "sim_report.csv",
    },
    "transform": {"input": None, "output": None, "standardize": False, "impute": "drop-rows"},
    "forecast": {
        **COMMON_DEFAULTS,
        "input": None,
        "raw": False,
        "impute": "drop-rows",
        "target": None,
        "window": 120,
        "lags": 4,
        "factors": 6,
        "method": "cqfm",
        "first_target": None,
        "output": "forecasts.csv",
    },
}


class UsageError(ValueError):
    """Bad command-line or configuration input."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add_estimation_flags(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--K", type=int, help="number of equally spaced quantiles (default 5)")
    g.add_argument("--taus", help="explicit comma-separated quantile positions")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--init", choices=["seeded-random", "pca"], help="starting values")
    p.add_argument("--tol-outer", dest="tol_outer", type=float, help="relative objective tolerance")
    p.add_argument("--tol-inner", dest="tol_inner", type=float, help="MM coefficient tolerance")
    p.add_argument("--max-iters", dest="max_iters", type=int, help="maximum outer cycles")
    p.add_argument("--max-inner-iters", dest="max_inner_iters", type=int, help="maximum MM iterations")
    p.add_argument("--mm-epsilon", dest="mm_epsilon", type=float, help="MM perturbation")
    p.add_argument("--workers", type=int, help="worker threads/processes")


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = _Parser(prog="cqfm", description="Composite quantile factor models.", argument_default=S)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, help_):
        p = sub.add_parser(name, help=help_, argument_default=S)
        p.add_argument("--config", help="JSON file of defaults for this command")
        return p

    p = command("fit", "estimate factors, loadings and intercepts")
    p.add_argument("--input", help="panel CSV")
    p.add_argument("--rank", type=int, help="number of factors")
    p.add_argument("--method", choices=["cqfm", "qfm", "pca"], type=str.lower)
    p.add_argument("--output-dir", dest="output_dir")
    _add_estimation_flags(p)

    p = command("select", "choose the number of factors by information criterion")
    p.add_argument("--input", help="panel CSV")
    p.add_argument("--rmax", type=int, help="largest candidate rank (default 8)")
    p.add_argument("--penalty", choices=["v1", "v2"], type=str.lower)
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--method", choices=["cqfm", "qfm", "pca"], type=str.lower)
    p.add_argument("--output-dir", dest="output_dir")
    _add_estimation_flags(p)

    p = command("simulate", "Monte-Carlo replications")
    p.add_argument("--dgp", choices=list(VARIANTS), help="error structure")
    p.add_argument("--error", choices=list(FAMILIES), help="error family")
    p.add_argument("--sizes", help="comma-separated TxN cells, e.g. 50x100,100x200")
    p.add_argument("--reps", type=int)
    p.add_argument("--methods", help="comma-separated subset of cqfm,qfm,pca")
    p.add_argument("--tasks", help="comma-separated subset of estimate,select_rank")
    p.add_argument("--base-seed", dest="base_seed", type=int)
    p.add_argument("--rmax", type=int)
    p.add_argument("--penalty", choices=["v1", "v2"], type=str.lower)
    p.add_argument("--output", help="long-format report CSV")
    _add_estimation_flags(p)

    p = command("transform", "apply tcodes and resolve missing values")
    p.add_argument("--input", help="CSV in FRED layout (names, tcodes, dated rows)")
    p.add_argument("--output", help="panel CSV to write")
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--impute", choices=list(IMPUTE))

    p = command("forecast", "rolling one-step diffusion-index forecasts")
    p.add_argument("--input", help="panel CSV (or FRED layout with --raw)")
    p.add_argument("--raw", action="store_true", help="input is in FRED layout; apply its tcodes first")
    p.add_argument("--impute", choices=list(IMPUTE), help="missing-value policy with --raw")
    p.add_argument("--target", help="target column name or index")
    p.add_argument("--window", type=int)
    p.add_argument("--lags", type=int)
    p.add_argument("--factors", type=int, help="number of factors; 0 gives the AR benchmark")
    p.add_argument("--method", choices=["cqfm", "qfm", "pca"], type=str.lower)
    p.add_argument("--first-target", dest="first_target", help="time label or row index of the first forecast")
    p.add_argument("--output", help="forecast CSV")
    _add_estimation_flags(p)
    return parser


def resolve_settings(args: argparse.Namespace) -> dict:
    """Merge defaults, the JSON config file and explicit flags (in that order)."""
    cmd = args.command
    settings = dict(DEFAULTS[cmd])
    given = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    cfg_path = getattr(args, "config", None)
    if cfg_path is not None:
        try:
            with open(cfg_path, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file {cfg_path}: {exc}") from None
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        unknown = sorted(set(cfg) - set(settings))
        if unknown:
            raise UsageError(f"unknown config keys for {cmd}: {unknown}")
        settings.update(cfg)
        # an explicit grid flag replaces whichever grid form the file used
        if "K" in given or "taus" in given:
            settings["K"] = settings["taus"] = None
    settings.update(given)
    if settings.get("K") is not None and settings.get("taus") is not None:
        raise UsageError("--K and --taus are mutually exclusive")
    return settings


def _grid(s) -> QuantileGrid:
    if s.get("taus") is not None:
        taus = s["taus"]
        if isinstance(taus, str):
            try:
                taus = [float(t) for t in taus.split(",") if t.strip()]
            except ValueError:
                raise UsageError(f"cannot parse --taus {s['taus']!r}") from None
        return QuantileGrid(taus)
    return equally_spaced_grid(5 if s.get("K") is None else s["K"])


def _config(s) -> CqfmConfig:
    return CqfmConfig(
        mm_epsilon=s["mm_epsilon"],
        inner_tol=s["tol_inner"],
        outer_tol=s["tol_outer"],
        max_outer_iters=s["max_iters"],
        max_inner_iters=s["max_inner_iters"],
        init=s["init"],
        seed=s["seed"],
        workers=s["workers"],
    )


def _require_input(s, key="input"):
    path = s.get(key)
    if path is None:
        raise UsageError(f"--{key} is required")
    if not os.path.isfile(path):
        raise UsageError(f"input file not found: {path}")
    return path


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v


def write_manifest(path, entries):
    """One JSON object per line, keys sorted for stable output."""
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps({k: _jsonable(v) for k, v in e.items()}, sort_keys=True) + "\n")


def _manifest_for_file(path):
    root, _ = os.path.splitext(path)
    return root + ".manifest.jsonl"


def _base_entry(cmd, settings, t0):
    return {
        "command": cmd,
        "config": {k: _jsonable(v) for k, v in sorted(settings.items())},
        "seed": settings.get("seed", settings.get("base_seed")),
        "version": __version__,
        "wall_time_s": round(time.perf_counter() - t0, 6),
    }


def _cmd_fit(s, t0):
    path = _require_input(s)
    if s.get("rank") is None:
        raise UsageError("--rank is required")
    if s["rank"] < 1:
        raise UsageError(f"--rank must be a positive integer, got {s['rank']}")
    panel = read_panel_csv(path)
    grid = _grid(s)
    config = _config(s)
    method = s["method"].upper()
    if method == "QFM" and s.get("K") is None and s.get("taus") is None:
        grid = QuantileGrid([0.5])
    if method == "QFM" and grid.K != 1:
        raise UsageError("qfm takes a single quantile; use --K 1 or --taus")
    if method == "QFM":
        fit = fit_cqfm(panel, s["rank"], grid, config, method_tag="QFM")
    else:
        fit = fit_factors(panel, s["rank"], method, grid, config)
    out = s["output_dir"]
    os.makedirs(out, exist_ok=True)
    cols = [f"f{j + 1}" for j in range(fit.rank)]
    tlabels = panel.time_labels or [str(t) for t in range(panel.T)]
    names = panel.var_names or [f"x{j + 1}" for j in range(panel.N)]
    files = {
        "factors.csv": lambda p: write_matrix_csv(p, fit.factors, cols, tlabels, "time"),
        "loadings.csv": lambda p: write_matrix_csv(p, fit.loadings, cols, names, "variable"),
        "intercepts.csv": lambda p: write_matrix_csv(
            p,
            fit.intercepts[:, None] if method != "PCA" else np.zeros((1, 1)),
            ["intercept"],
            [fmt(t) for t in grid.taus] if method != "PCA" else ["mean"],
            "tau",
        ),
    }
    loss = objective(panel, fit, grid) if method != "PCA" else fit.loss_trace[-1]
    entries = []
    for name, writer in files.items():
        writer(os.path.join(out, name))
        e = _base_entry("fit", s, t0)
        e.update(
            output=name,
            method=fit.method_tag,
            rank=fit.rank,
            taus=grid.taus.tolist(),
            converged=bool(fit.converged),
            degenerate=bool(fit.degenerate),
            iterations=int(fit.iterations),
            final_loss=float(loss),
        )
        entries.append(e)
    write_manifest(os.path.join(out, "manifest.jsonl"), entries)
    if not fit.converged:
        log.warning("estimator stopped at the iteration limit without converging")
    print(f"fit {fit.method_tag} r={fit.rank}: loss={loss:.6g} converged={fit.converged} -> {out}")


def _cmd_select(s, t0):
    from .selection import select_num_factors

    path = _require_input(s)
    panel = read_panel_csv(path)
    grid = _grid(s)
    method = s["method"].upper()
    if method == "QFM":
        grid = QuantileGrid([0.5]) if s.get("K") is None and s.get("taus") is None else grid
    rep = select_num_factors(
        panel, s["rmax"], grid, _config(s), s["penalty"].upper(), method=method, standardize=s["standardize"]
    )
    out = s["output_dir"]
    os.makedirs(out, exist_ok=True)
    name = "ic.csv"
    write_matrix_csv(
        os.path.join(out, name),
        np.array(rep.ic_values)[:, None],
        ["ic"],
        [str(r) for r in rep.candidate_ranks],
        "rank",
    )
    e = _base_entry("select", s, t0)
    e.update(
        output=name,
        method=method,
        penalty=rep.penalty_variant,
        chosen_rank=rep.chosen_rank,
        boundary=rep.boundary,
        ic_values=[float(v) for v in rep.ic_values],
    )
    write_manifest(os.path.join(out, "manifest.jsonl"), [e])
    msg = f"chosen rank {rep.chosen_rank} ({method}, {rep.penalty_variant})"
    if rep.boundary:
        msg += " [at r_max boundary]"
    print(msg)


def _parse_list(text, allowed, what):
    items = [t.strip() for t in str(text).split(",") if t.strip()]
    bad = [t for t in items if t not in allowed]
    if not items or bad:
        raise UsageError(f"invalid {what} {bad or text!r}; choose from {list(allowed)}")
    return items


def _parse_sizes(text):
    sizes = []
    for cell in str(text).split(","):
        parts = cell.lower().strip().split("x")
        try:
            T, N = (int(v) for v in parts)
        except ValueError:
            raise UsageError(f"cannot parse size {cell!r}; use TxN such as 50x100") from None
        sizes.append((T, N))
    return sizes


def _cmd_simulate(s, t0):
    methods = [m.upper() for m in _parse_list(s["methods"].lower(), ("cqfm", "qfm", "pca"), "methods")]
    tasks = _parse_list(s["tasks"], TASKS, "tasks")
    sizes = _parse_sizes(s["sizes"])
    spec = DgpSpec(ErrorSpec(s["error"]), s["dgp"])
    report = run_replications(
        spec,
        sizes,
        methods,
        _grid(s),
        reps=s["reps"],
        base_seed=s["base_seed"],
        tasks=tasks,
        r_max=s["rmax"],
        penalty=s["penalty"].upper(),
        config=_config(s),
        workers=s["workers"],
    )
    out = s["output"]
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    report.to_csv(out)
    e = _base_entry("simulate", s, t0)
    e.update(output=os.path.basename(out), seeds=report.seeds, failures=sum(report.failures.values()))
    write_manifest(_manifest_for_file(out), [e])
    print(f"{len(report.records)} method-replications -> {out}")


def _cmd_transform(s, t0):
    path = _require_input(s)
    if s.get("output") is None:
        raise UsageError("--output is required")
    raw = read_fred_csv(path)
    panel, manifest = prepare_panel(raw, s["standardize"], s["impute"])
    out = s["output"]
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    write_panel_csv(out, panel)
    e = _base_entry("transform", s, t0)
    e.update(output=os.path.basename(out), **manifest)
    write_manifest(_manifest_for_file(out), [e])
    print(f"{manifest['rows_out']} x {panel.N} panel -> {out}")


def _cmd_forecast(s, t0):
    path = _require_input(s)
    if s.get("target") is None:
        raise UsageError("--target is required")
    prep = None
    if s["raw"]:
        panel, prep = prepare_panel(read_fred_csv(path), standardize=False, impute=s["impute"])
    else:
        panel = read_panel_csv(path)
    config = _config(s)
    spec = ForecastSpec(
        target=s["target"],
        window=s["window"],
        n_lags=s["lags"],
        n_factors=s["factors"],
        factor_method=s["method"],
        grid=_grid(s),
        first_target=s["first_target"],
        seed=s["seed"],
        config=config,
    )
    res = rolling_diffusion_forecast(panel, spec)
    out = s["output"]
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    res.to_csv(out)
    e = _base_entry("forecast", s, t0)
    e.update(
        output=os.path.basename(out),
        target=res.target_name,
        n_forecasts=int(res.forecasts.size),
        rmse=res.rmse,
        ridge_origins=int(res.ridge_flags.sum()),
        window_standardized=spec.standardize_window,
    )
    if prep is not None:
        e["preparation"] = prep
    write_manifest(_manifest_for_file(out), [e])
    print(f"{res.forecasts.size} forecasts of {res.target_name}: RMSE={res.rmse:.6g} -> {out}")


COMMANDS = {
    "fit": _cmd_fit,
    "select": _cmd_select,
    "simulate": _cmd_simulate,
    "transform": _cmd_transform,
    "forecast": _cmd_forecast,
}


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(getattr(args, "verbose", 0), 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    t0 = time.perf_counter()
    try:
        settings = resolve_settings(args)
        COMMANDS[args.command](settings, t0)
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"cqfm {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, TypeError, OSError, csv.Error) as exc:
        print(f"cqfm {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
