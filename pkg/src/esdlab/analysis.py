"""Run a configuration end to end: bounds, ESD, trajectory, diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .config import RunConfig
from .diagnostics import (
    CheckResult,
    ConvergenceReport,
    DiagnosticSeries,
    OscillationReport,
    chemostat_series,
    check_envelope,
    check_mu_window,
    compare_rate,
    concentration_metrics,
    first_index_after,
    general_series,
    tv_and_oscillation,
)
from .equilibrium import ESDGap, ESDResult, compute_esd, esd_general, verify_esd
from .model import (
    AssumptionReport,
    BetaSmallness,
    ChemostatModel,
    GeneralModel,
    check_beta_smallness,
    check_chemostat_assumptions,
    check_general_assumptions,
    compute_S_m,
    estimate_rho_max,
    mu_upper_bound,
)
from .solver import State, Trajectory, simulate

TRANSIENT_FRACTION = 0.1  # leading share of the run excluded from "after transient" checks
U_FIT_HORIZON = 5.0  # u decay is fitted over [t0, t0 + U_FIT_HORIZON / R0]


def assumption_report(cfg: RunConfig, model=None) -> AssumptionReport:
    model = model if model is not None else cfg.build_model()
    if isinstance(model, ChemostatModel):
        return check_chemostat_assumptions(model, cfg.domain)
    S_range = None
    if cfg.model.box_S_min is not None:
        S_range = (cfg.model.box_S_min, model.S0_effective)
    return check_general_assumptions(model, cfg.domain, S_range, (0.0, cfg.model.box_rho_max))


@dataclass
class Bounds:
    """A-priori constants: mass ceiling, nutrient floor, smallness of beta."""

    report: AssumptionReport
    rho_M: float
    S_m: Optional[float] = None
    smallness: Optional[BetaSmallness] = None
    mu_M: Optional[float] = None

    def items(self):
        yield "rho_M", self.rho_M
        if self.S_m is not None:
            yield "S_m", self.S_m
        if self.smallness is not None:
            yield "beta_max", self.smallness.beta_max
            yield "beta_small", self.smallness.holds
        if self.mu_M is not None:
            yield "mu_M", self.mu_M


def chemostat_rho_bound(m: ChemostatModel, report: AssumptionReport, init: State, x) -> float:
    """``a_M (S0 + |u(0)|)``: the scaled mass ``int n/a`` never exceeds ``S0 + |u(0)|``."""
    u0 = float(np.trapezoid(init.n / m.rendering(x), x)) + init.S - m.S0
    return report["a_M"] * (m.S0 + abs(u0))


def compute_bounds(cfg: RunConfig, model=None, report: Optional[AssumptionReport] = None) -> Bounds:
    model = model if model is not None else cfg.build_model()
    report = report if report is not None else assumption_report(cfg, model)
    init = cfg.initial_state()
    if isinstance(model, ChemostatModel):
        return Bounds(report, chemostat_rho_bound(model, report, init, cfg.domain.nodes))
    rho_M = estimate_rho_max(model, report, init.rho, init.S)
    S_m = compute_S_m(model, rho_M)
    small = check_beta_smallness(model, report, rho_M, S_m)
    mu_M = mu_upper_bound(model, rho_M, S_m) if model.beta > 0 else None
    return Bounds(report, rho_M, S_m, small, mu_M)


def equilibrium_for(cfg: RunConfig, model=None) -> ESDResult:
    model = model if model is not None else cfg.build_model()
    return compute_esd(model, cfg.domain)


@dataclass
class RunResult:
    config: RunConfig
    model: object
    esd: ESDResult
    bounds: Bounds
    trajectory: Trajectory
    oscillation: OscillationReport
    gap: ESDGap
    series: Optional[DiagnosticSeries] = None
    convergence: Optional[ConvergenceReport] = None
    checks: dict = field(default_factory=dict)


def _check_discriminant(series: DiagnosticSeries) -> CheckResult:
    k0 = first_index_after(series.t, series.t[0] + TRANSIENT_FRACTION * (series.t[-1] - series.t[0]))
    D = series.discriminant[k0:]
    if len(D) == 0:
        return CheckResult("discriminant_positive", False, "no records after transient")
    dmin = float(np.min(D))
    vals = {"min_discriminant": dmin, "after_t": float(series.t[k0])}
    if dmin > 0:
        return CheckResult("discriminant_positive", True, "ok", None, vals)
    k = k0 + int(np.argmax(D <= 0))
    return CheckResult("discriminant_positive", False, "complex-root regime", float(series.t[k]), vals)


def _chemostat_convergence(m: ChemostatModel, series, bounds: Bounds, osc, gap) -> ConvergenceReport:
    t = series.t
    rates = [compare_rate("u", t, np.abs(series.u), m.R0, (t[0], t[0] + U_FIT_HORIZON / m.R0))]
    nu = min(m.R0, float(np.min(series.rho)) * bounds.report["K_eta_lo"])
    rates.append(compare_rate("J_neg", t, series.J_neg, nu))
    env = check_envelope(t, series.J_neg, nu, float(series.J_neg[0]), "J_neg_envelope")
    return ConvergenceReport("chemostat", rates, osc.tail_ratio_rho2, osc.tail_ratio_rho,
                             gap.as_dict(), [env])


def _general_convergence(m: GeneralModel, series, bounds: Bounds, osc, gap) -> ConvergenceReport:
    rep = ConvergenceReport("general", [], osc.tail_ratio_rho2, osc.tail_ratio_rho, gap.as_dict())
    if series.mu is None:
        rep.notes.append("beta = 0: no J, mu or W")
        return rep
    mu_check = check_mu_window(series, bounds.mu_M)
    rep.checks.append(mu_check)
    rep.checks.append(_check_discriminant(series))
    mu_m = mu_check.values.get("mu_m", float("nan"))
    rate = bounds.report["K_Q"] * mu_m
    if math.isfinite(rate):
        rep.rates.append(compare_rate("W_neg", series.t, series.W_neg, rate))
        rep.checks.append(check_envelope(series.t, series.W_neg, rate, float(series.W_neg[0]),
                                         "W_neg_envelope"))
    else:
        rep.notes.append("mu_m undefined: W envelope skipped")
    return rep


def run(
    cfg: RunConfig,
    diagnostics: bool = True,
    enforce_bounds: bool = True,
    mu0_policy: str = "upper_root",
) -> RunResult:
    """Simulate ``cfg`` and evaluate everything the theory predicts about the run."""
    model = cfg.build_model()
    report = assumption_report(cfg, model)
    bounds = compute_bounds(cfg, model, report)
    if isinstance(model, GeneralModel):
        esd = esd_general(model, cfg.domain)
    else:
        esd = compute_esd(model, cfg.domain)
    solver = cfg.solver
    if diagnostics and solver.snapshot_stride != solver.record_stride:
        solver = replace(solver, snapshot_stride=solver.record_stride)
    traj = simulate(model, cfg.domain, cfg.initial_state(), solver,
                    rho_max=bounds.rho_M if enforce_bounds else None)
    osc = tv_and_oscillation(traj.times, traj.rho)
    gap = verify_esd(model, esd, traj)
    result = RunResult(cfg, model, esd, bounds, traj, osc, gap)
    if not diagnostics:
        return result
    x_bar = None if esd.extinct else esd.x_bar
    if isinstance(model, ChemostatModel):
        series = chemostat_series(model, traj, x_bar)
        conv = _chemostat_convergence(model, series, bounds, osc, gap)
    else:
        series = general_series(model, traj, mu0_policy, x_bar)
        conv = _general_convergence(model, series, bounds, osc, gap)
    result.series = series
    result.convergence = conv
    result.checks = {c.name: c for c in conv.checks}
    return result


def final_concentration(result: RunResult):
    d = result.trajectory.domain
    x_bar = result.esd.x_bar_refined if math.isfinite(result.esd.x_bar_refined) else result.esd.x_bar
    return concentration_metrics(d.nodes, d.dx, result.trajectory.final.n, x_bar)


def admissible_beta(cfg: RunConfig, fraction: float = 0.5) -> tuple:
    """``(fraction * beta_max, bounds)`` for a general-model config.

    ``beta_max`` depends on ``beta`` through ``rho_M``; it is evaluated at
    ``beta = 0`` and the returned bounds are re-evaluated at the chosen
    ``beta`` so that ``bounds.smallness.holds`` can be checked.
    """
    if cfg.model.kind != "general":
        raise ValueError("the smallness condition concerns the general model")
    beta_max = compute_bounds(cfg.with_beta(0.0)).smallness.beta_max
    beta = fraction * beta_max
    return beta, compute_bounds(cfg.with_beta(beta))
