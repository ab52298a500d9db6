"""Command line entry point: ``esdlab {check,equilibrium,simulate,sweep,plot}``.

Exit codes: 0 success, 1 invalid input or failed hypotheses, 2 numerical
failure, 3 file-system problems.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io as eio
from .analysis import assumption_report, compute_bounds, equilibrium_for, run
from .config import ConfigError, dump_config, load_config, parse_config_text
from .diagnostics import SERIES_COLUMNS, critical_beta
from .exprlang import EvaluationError, ParseError
from .model import GeneralModel

log = logging.getLogger("esdlab")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3

SWEEP_COLUMNS = (
    "beta", "status", "rho_gap", "S_gap", "sign_changes", "max_peak_ratio",
    "min_discriminant", "mu_window_pass", "tv_tail_ratio", "error",
)


def _print_items(items, stream=None):
    stream = stream or sys.stdout
    for k, v in items:
        stream.write(f"{k}={eio.fmt(v)}\n")


# ---------------------------------------------------------------- commands


def cmd_check(args) -> int:
    cfg = load_config(args.config)
    model = cfg.build_model()
    report = assumption_report(cfg, model)
    sys.stdout.write(report.to_text())
    if report.holds:
        try:
            _print_items(compute_bounds(cfg, model, report).items())
        except (ArithmeticError, ValueError) as exc:
            print(f"note=a-priori bounds unavailable: {exc}")
    if args.csv:
        eio.write_csv(args.csv, report.to_csv_rows()[0], report.to_csv_rows()[1:])
    return EXIT_OK if report.holds else EXIT_INVALID


def cmd_equilibrium(args) -> int:
    cfg = load_config(args.config)
    model = cfg.build_model()
    esd = equilibrium_for(cfg, model)
    sys.stdout.write(esd.to_text(args.digits))
    for note in esd.notes:
        print(f"note={note}")
    if isinstance(model, GeneralModel) and model.beta > 0 and not esd.extinct:
        print(f"beta_star={eio.fmt(critical_beta(model, esd))}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.t_end is not None:
        cfg = cfg.with_solver(t_end=args.t_end)
    if args.beta is not None:
        cfg = cfg.with_beta(args.beta)
    diagnostics = args.diagnostics or cfg.output.diagnostics
    snap_dir = args.snapshots or cfg.output.snapshots
    if snap_dir and not cfg.solver.snapshot_stride:
        cfg = cfg.with_solver(snapshot_stride=cfg.solver.record_stride)
    result = run(cfg, diagnostics=diagnostics)

    out = Path(args.out or cfg.output.trajectory)
    written = [eio.write_trajectory(out, result.trajectory)]
    if snap_dir:
        written += eio.write_snapshots(snap_dir, result.trajectory)
    figure = args.figure or cfg.output.figure
    if diagnostics:
        series_path = Path(args.series or cfg.output.series or out.with_name(out.stem + "_series.csv"))
        written.append(eio.write_csv(series_path, SERIES_COLUMNS, result.series.rows()))
        figure = figure or out.with_suffix(".svg")
    if figure:
        from .plotting import plot_series

        cols = {"t": result.trajectory.times, "rho": result.trajectory.rho, "S": result.trajectory.S}
        written.append(plot_series(cols, figure))

    g = result.gap
    _print_items([
        ("records", len(result.trajectory)),
        ("t_end", float(result.trajectory.times[-1])),
        ("S_final", float(result.trajectory.S[-1])),
        ("rho_final", float(result.trajectory.rho[-1])),
        ("rho_M", result.bounds.rho_M),
        ("S_gap", g.S_gap),
        ("rho_gap", g.rho_gap),
        ("sign_changes", result.oscillation.sign_changes),
    ])
    if result.convergence is not None:
        sys.stdout.write(result.convergence.to_text())
        if args.report:
            written.append(eio.write_key_values(args.report, result.convergence.items()))
    for p in written:
        print(f"wrote={p}")
    return EXIT_OK


def _sweep_row(job) -> list:
    text, name, beta, t_end = job
    cfg = parse_config_text(text, name).with_beta(beta)
    if t_end is not None:
        cfg = cfg.with_solver(t_end=t_end)
    nan = float("nan")
    try:
        res = run(cfg, diagnostics=True)
    except (ArithmeticError, ValueError) as exc:
        return [beta, "failed", nan, nan, None, nan, nan, None, nan, str(exc)]
    checks = res.checks
    disc = checks.get("discriminant_positive")
    mu = checks.get("mu_window")
    return [
        beta, "ok", res.gap.rho_gap, res.gap.S_gap, res.oscillation.sign_changes,
        res.oscillation.max_peak_ratio,
        disc.values.get("min_discriminant", nan) if disc else nan,
        mu.passed if mu else None,
        res.oscillation.tail_ratio_rho2, "",
    ]


def onset_bracket(rows, min_sign_changes: int = 3):
    """``(previous beta, first beta with enough sign changes)``, or None."""
    prev = None
    for r in rows:
        if r[1] == "ok" and r[4] is not None and r[4] >= min_sign_changes:
            return (prev, r[0])
        prev = r[0]
    return None


def sweep(cfg, betas, parallel: int = 1, t_end=None) -> list:
    text = dump_config(cfg)
    jobs = [(text, cfg.name, float(b), t_end) for b in betas]
    if parallel <= 1:
        return [_sweep_row(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=parallel) as pool:
        # map preserves input order, so rows stay sorted by beta
        return list(pool.map(_sweep_row, jobs))


def cmd_sweep(args) -> int:
    if not args.beta_min > 0:
        raise ConfigError("--beta-min must be > 0", "beta_min")
    if args.steps < 2:
        raise ConfigError("--steps must be >= 2", "steps")
    if args.beta_max < args.beta_min:
        raise ConfigError("--beta-max must be >= --beta-min", "beta_max")
    cfg = load_config(args.config)
    model = cfg.build_model()
    if not isinstance(model, GeneralModel):
        raise ConfigError("sweep needs a general model (beta is its parameter)", "kind")
    betas = np.geomspace(args.beta_min, args.beta_max, args.steps)
    rows = sweep(cfg, betas, args.parallel, args.t_end)
    path = eio.write_csv(args.out, SWEEP_COLUMNS, rows)

    esd = equilibrium_for(cfg, model)
    bstar = critical_beta(model, esd) if not esd.extinct else float("nan")
    bracket = onset_bracket(rows)
    items = [("beta_star", bstar)]
    if bracket is None:
        items.append(("onset", "none"))
    else:
        items += [("onset_beta", bracket[1]), ("onset_bracket_lo", bracket[0])]
    items.append(("failed_runs", sum(r[1] != "ok" for r in rows)))
    _print_items(items)
    print(f"wrote={path}")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plotting import plot_csv

    names = tuple(c.strip() for c in args.columns.split(",") if c.strip())
    if not names:
        raise ConfigError("--columns is empty", "columns")
    try:
        path = plot_csv(args.csv, args.out, names)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0]), "columns") from None
    print(f"wrote={path}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="esdlab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check", help="sample the model hypotheses and a-priori constants")
    c.add_argument("config", help="config file or preset name")
    c.add_argument("--csv", help="also write the report as CSV")
    c.set_defaults(func=cmd_check)

    e = sub.add_parser("equilibrium", help="compute the evolutionary stable distribution")
    e.add_argument("config")
    e.add_argument("--digits", type=int, help="fixed decimals instead of round-trip floats")
    e.set_defaults(func=cmd_equilibrium)

    s = sub.add_parser("simulate", help="integrate the model and write a trajectory CSV")
    s.add_argument("config")
    s.add_argument("--out", help="trajectory CSV (default from config)")
    s.add_argument("--snapshots", metavar="DIR", help="write n(t, x) snapshots here")
    s.add_argument("--diagnostics", action="store_true", help="series CSV, figure and convergence report")
    s.add_argument("--series", help="diagnostic series CSV path")
    s.add_argument("--figure", help="SVG figure of rho and S")
    s.add_argument("--report", help="write the convergence report as key=value text")
    s.add_argument("--t-end", type=float, dest="t_end")
    s.add_argument("--beta", type=float, help="override beta (general model)")
    s.set_defaults(func=cmd_simulate)

    w = sub.add_parser("sweep", help="simulate over a geometric grid of beta")
    w.add_argument("config")
    w.add_argument("--beta-min", type=float, required=True, dest="beta_min")
    w.add_argument("--beta-max", type=float, required=True, dest="beta_max")
    w.add_argument("--steps", type=int, required=True)
    w.add_argument("--parallel", type=int, default=1)
    w.add_argument("--out", default="sweep.csv")
    w.add_argument("--t-end", type=float, dest="t_end")
    w.set_defaults(func=cmd_sweep)

    pl = sub.add_parser("plot", help="render rho (solid) and S (dashed) from a CSV")
    pl.add_argument("csv")
    pl.add_argument("--out", required=True)
    pl.add_argument("--columns", default="rho,S")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ArithmeticError, EvaluationError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
