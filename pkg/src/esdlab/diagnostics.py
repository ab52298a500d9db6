"""Proof quantities along trajectories and the inequalities they should obey.

Chemostat branch: the conserved quantity ``u = int n/a + S - S0`` and
``J = d/dt int n/a``. General branch: ``P = d rho/dt``, ``J = Q/beta``,
``alpha = int n R_S``, ``gamma = int n R^2``, the Riccati coefficient ``mu``
with its admissible window ``[mu_-, mu_+]``, ``W = P + beta mu J`` and the
discriminant ``D = Q_S^2 - 4 alpha beta |Q_rho|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .equilibrium import ESDResult
from .model import ChemostatModel, GeneralModel

NOISE_FLOOR = 1e-13
ENVELOPE_ABS = 1e-8
ENVELOPE_REL = 0.05

SERIES_COLUMNS = (
    "t", "S", "rho", "u", "J", "P", "alpha", "gamma", "mu", "mu_minus", "mu_plus",
    "W", "discriminant", "mean_x", "var_x", "tv_rho2_cum", "int_abs_rhodot_cum",
)


class MissingSnapshots(ValueError):
    pass


@dataclass
class DiagnosticSeries:
    kind: str
    t: np.ndarray
    S: np.ndarray
    rho: np.ndarray
    mean_x: np.ndarray
    var_x: np.ndarray
    tv_rho2_cum: np.ndarray
    int_abs_rhodot_cum: np.ndarray
    w1_to_dirac: Optional[np.ndarray] = None
    # chemostat
    u: Optional[np.ndarray] = None
    J: Optional[np.ndarray] = None
    J_neg: Optional[np.ndarray] = None
    J_rhs: Optional[np.ndarray] = None
    # general
    P: Optional[np.ndarray] = None
    P_rhs: Optional[np.ndarray] = None
    alpha: Optional[np.ndarray] = None
    gamma: Optional[np.ndarray] = None
    mu: Optional[np.ndarray] = None
    mu_minus: Optional[np.ndarray] = None
    mu_plus: Optional[np.ndarray] = None
    W: Optional[np.ndarray] = None
    W_neg: Optional[np.ndarray] = None
    discriminant: Optional[np.ndarray] = None
    Q_S: Optional[np.ndarray] = None
    Q_rho: Optional[np.ndarray] = None
    notes: list = field(default_factory=list)

    def rows(self):
        """Rows matching :data:`SERIES_COLUMNS`; absent values are ``None``."""
        cols = [getattr(self, c, None) for c in SERIES_COLUMNS]
        for k in range(len(self.t)):
            yield [None if c is None else float(c[k]) for c in cols]


def _cumulative_abs_diff(y: np.ndarray) -> np.ndarray:
    return np.concatenate(([0.0], np.cumsum(np.abs(np.diff(y)))))


def _require_snapshots(traj):
    if not traj.has_full_snapshots:
        raise MissingSnapshots("diagnostics need an n snapshot at every record (snapshot_stride = record_stride)")


def _base(traj, x_bar: Optional[float]) -> dict:
    x, dx = traj.domain.nodes, traj.domain.dx
    w1 = None
    if x_bar is not None and traj.snapshots is not None and traj.has_full_snapshots:
        w1 = np.array([concentration_metrics(x, dx, n, x_bar).w1_to_dirac for n in traj.snapshots])
    return dict(
        t=traj.times, S=traj.S, rho=traj.rho, mean_x=traj.mean_x, var_x=traj.var_x,
        tv_rho2_cum=_cumulative_abs_diff(traj.rho**2),
        int_abs_rhodot_cum=_cumulative_abs_diff(traj.rho),
        w1_to_dirac=w1,
    )


def chemostat_series(m: ChemostatModel, traj, x_bar: Optional[float] = None) -> DiagnosticSeries:
    _require_snapshots(traj)
    d = traj.domain
    x = d.nodes
    a = m.rendering(x)
    scaled = np.trapezoid(traj.snapshots / a, dx=d.dx, axis=1)
    u = scaled + traj.S - m.S0
    J = np.gradient(scaled, traj.times) if len(traj) > 1 else np.zeros(1)
    J_rhs = np.array([
        d.integrate(n * m.growth(x, S) / a) for n, S in zip(traj.snapshots, traj.S)
    ])
    return DiagnosticSeries(
        kind="chemostat", u=u, J=J, J_neg=np.maximum(0.0, -J), J_rhs=J_rhs, **_base(traj, x_bar)
    )


def riccati_implicit(t, qs, qr, alpha, beta: float, mu0: float) -> np.ndarray:
    """Implicit Euler for ``beta mu' = -beta |Q_rho| mu^2 + |Q_S| mu - alpha``.

    Each step solves the quadratic for ``mu_{k+1}`` and keeps the larger
    root, the branch through the stable zero ``mu_+``. NaN once no real
    root exists.
    """
    mu = np.empty(len(t))
    mu[0] = mu0
    for k in range(len(t) - 1):
        h = (t[k + 1] - t[k]) / beta
        a = h * beta * qr[k + 1]
        b = 1.0 - h * qs[k + 1]
        c = h * alpha[k + 1] - mu[k]
        disc = b * b - 4 * a * c
        if not np.isfinite(mu[k]) or disc < 0:
            mu[k + 1] = np.nan
        elif a == 0:
            mu[k + 1] = -c / b
        else:
            # larger root, written to avoid cancellation
            sq = math.sqrt(disc)
            mu[k + 1] = (-b + sq) / (2 * a) if b < 0 else (-2 * c) / (b + sq)
    return mu


def general_series(
    m: GeneralModel, traj, mu0_policy: str = "upper_root", x_bar: Optional[float] = None
) -> DiagnosticSeries:
    """Proof quantities for the general model.

    ``mu0_policy``: ``"upper_root"`` starts the Riccati coefficient at
    ``mu_+(0)``; ``"midpoint"`` at the middle of ``[mu_-(0), mu_+(0)]``.
    """
    _require_snapshots(traj)
    d = traj.domain
    x = d.nodes
    f = m.fn
    snaps = traj.snapshots
    R = np.array([m.rate(x, S) for S in traj.S])
    RS = np.array([np.broadcast_to(f["R_S"](x=x, S=S), x.shape) for S in traj.S])
    alpha = np.trapezoid(snaps * RS, dx=d.dx, axis=1)
    gamma = np.trapezoid(snaps * R**2, dx=d.dx, axis=1)
    P_rhs = np.trapezoid(snaps * R, dx=d.dx, axis=1)
    P = np.gradient(traj.rho, traj.times) if len(traj) > 1 else np.zeros(1)
    series = DiagnosticSeries(kind="general", P=P, P_rhs=P_rhs, alpha=alpha, gamma=gamma,
                              **_base(traj, x_bar))
    if m.beta == 0:
        series.notes.append("beta = 0: J, mu, W and the discriminant are undefined")
        return series

    beta = m.beta
    qs = np.abs([f["Q_S"](S=S, rho=r) for S, r in zip(traj.S, traj.rho)]).astype(float)
    qr = np.abs([f["Q_rho"](S=S, rho=r) for S, r in zip(traj.S, traj.rho)]).astype(float)
    J = np.array([m.q(S, r) for S, r in zip(traj.S, traj.rho)]) / beta
    D = qs**2 - 4 * alpha * beta * qr
    with np.errstate(invalid="ignore", divide="ignore"):
        root = np.where(D >= 0, np.sqrt(np.maximum(D, 0.0)), np.nan)
        mu_minus = (qs - root) / (2 * beta * qr)
        mu_plus = (qs + root) / (2 * beta * qr)
    if mu0_policy == "upper_root":
        mu0 = mu_plus[0]
    elif mu0_policy == "midpoint":
        mu0 = 0.5 * (mu_minus[0] + mu_plus[0])
    else:
        raise ValueError(f"unknown mu0_policy {mu0_policy!r}")
    mu = riccati_implicit(traj.times, qs, qr, alpha, beta, mu0)
    W = P + beta * mu * J
    series.J = J
    series.Q_S, series.Q_rho = -qs, -qr
    series.mu, series.mu_minus, series.mu_plus = mu, mu_minus, mu_plus
    series.W, series.W_neg = W, np.maximum(0.0, -W)
    series.discriminant = D
    return series


# --------------------------------------------------------------------------
# Checks


class WindowTooShort(ValueError):
    pass


@dataclass(frozen=True)
class DecayFit:
    rate: float
    r_squared: float
    n_points: int
    noise_floor_reached: bool = False


def fit_decay_rate(t, y, window: Optional[tuple] = None, floor: float = NOISE_FLOOR) -> DecayFit:
    """Least-squares slope of ``ln y`` against ``t`` (negative for decay).

    Only samples with ``y > floor`` inside ``window`` are used.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    mask = np.ones(len(t), dtype=bool)
    if window is not None:
        mask &= (t >= window[0]) & (t <= window[1])
    in_window = int(mask.sum())
    mask &= y > floor
    if mask.sum() < 10:
        raise WindowTooShort(f"only {int(mask.sum())} usable samples (need >= 10)")
    tt, ly = t[mask], np.log(y[mask])
    A = np.vstack([tt, np.ones_like(tt)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - (slope * tt + icpt)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    return DecayFit(float(slope), r2, int(mask.sum()), noise_floor_reached=int(mask.sum()) < in_window)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    first_violation_time: Optional[float] = None
    values: dict = field(default_factory=dict)


def check_mu_window(series: DiagnosticSeries, mu_M: float) -> CheckResult:
    """``max_t mu_- <= mu_m := min_t mu_+`` and ``mu(t) in [mu_m, mu_M]``."""
    if series.mu is None:
        return CheckResult("mu_window", False, "beta = 0: no Riccati coefficient")
    D = series.discriminant
    if np.any(D < 0):
        k = int(np.argmax(D < 0))
        return CheckResult("mu_window", False, "complex-root regime", float(series.t[k]),
                           {"min_discriminant": float(D.min())})
    mu_m = float(np.min(series.mu_plus))
    mu_lo_max = float(np.max(series.mu_minus))
    vals = {"mu_m": mu_m, "max_mu_minus": mu_lo_max, "mu_M": mu_M,
            "mu_min": float(np.nanmin(series.mu)), "mu_max": float(np.nanmax(series.mu))}
    if mu_lo_max > mu_m:
        k = int(np.argmax(series.mu_minus))
        return CheckResult("mu_window", False, "max mu_- exceeds min mu_+", float(series.t[k]), vals)
    bad = ~((series.mu >= mu_m) & (series.mu <= mu_M))
    if np.any(bad):
        k = int(np.argmax(bad))
        return CheckResult("mu_window", False, f"mu={series.mu[k]!r} outside [mu_m, mu_M]",
                           float(series.t[k]), vals)
    return CheckResult("mu_window", True, "ok", None, vals)


def check_envelope(t, values, rate: float, c0: float, name: str = "envelope") -> CheckResult:
    """``values_k <= c0 e^{-rate t_k}`` with 5% relative and 1e-8 absolute slack."""
    t = np.asarray(t, dtype=float)
    env = c0 * np.exp(-rate * (t - t[0]))
    bound = env + ENVELOPE_ABS + ENVELOPE_REL * env
    excess = np.asarray(values) - bound
    worst = float(np.max(excess)) if len(excess) else 0.0
    vals = {"rate": rate, "c0": c0, "worst_excess": worst}
    if worst > 0:
        k = int(np.argmax(excess > 0))
        vals["violations"] = int(np.sum(excess > 0))
        return CheckResult(name, False, f"value {values[k]!r} above envelope {env[k]!r}",
                           float(t[k]), vals)
    return CheckResult(name, True, "ok", None, vals)


@dataclass
class OscillationReport:
    tv_rho2: float
    int_abs_rhodot: float
    sign_changes: int
    extrema_times: np.ndarray
    extrema_values: np.ndarray
    peak_ratios: np.ndarray  # successive peak-to-trough swing ratios
    period: float
    tail_ratio_rho2: float
    tail_ratio_rho: float

    @property
    def damped(self) -> bool:
        return len(self.peak_ratios) > 0 and bool(np.all(self.peak_ratios < 1))

    @property
    def max_peak_ratio(self) -> float:
        return float(np.max(self.peak_ratios)) if len(self.peak_ratios) else float("nan")


def turning_points(y: np.ndarray, threshold: float) -> list:
    """Indices of local extrema, keeping only reversals larger than ``threshold``.

    A candidate extremum is accepted once the series has moved back by more
    than ``threshold``, so rounding-level wiggles are ignored.
    """
    pts = []
    direction = 0
    ext = 0
    for k in range(1, len(y)):
        if direction == 0:
            if abs(y[k] - y[0]) > threshold:
                direction = 1 if y[k] > y[0] else -1
                ext = k
        elif direction == 1:
            if y[k] > y[ext]:
                ext = k
            elif y[ext] - y[k] > threshold:
                pts.append(ext)
                direction, ext = -1, k
        else:
            if y[k] < y[ext]:
                ext = k
            elif y[k] - y[ext] > threshold:
                pts.append(ext)
                direction, ext = 1, k
    return pts


def tv_and_oscillation(t, rho, rel_threshold: float = 1e-9, tail_fraction: float = 0.1) -> OscillationReport:
    t = np.asarray(t, dtype=float)
    rho = np.asarray(rho, dtype=float)
    tv2 = _cumulative_abs_diff(rho**2)
    tv1 = _cumulative_abs_diff(rho)
    span = float(np.ptp(rho)) if len(rho) else 0.0
    pts = turning_points(rho, rel_threshold * max(span, 1e-300)) if span > 0 else []
    ext_t, ext_v = t[pts], rho[pts]
    # swings between consecutive extrema; the partial swing out of rho(0) is not a period
    swings = np.abs(np.diff(ext_v))
    ratios = swings[1:] / swings[:-1] if len(swings) > 1 else np.empty(0)
    period = float(2 * np.mean(np.diff(ext_t))) if len(ext_t) > 1 else float("nan")
    t_tail = t[-1] - tail_fraction * (t[-1] - t[0]) if len(t) else 0.0
    k = int(np.searchsorted(t, t_tail)) if len(t) else 0

    def tail(c):
        return float((c[-1] - c[k]) / c[-1]) if len(c) and c[-1] > 0 else 0.0

    return OscillationReport(
        tv_rho2=float(tv2[-1]) if len(tv2) else 0.0,
        int_abs_rhodot=float(tv1[-1]) if len(tv1) else 0.0,
        sign_changes=len(pts),
        extrema_times=ext_t,
        extrema_values=ext_v,
        peak_ratios=ratios,
        period=period,
        tail_ratio_rho2=tail(tv2),
        tail_ratio_rho=tail(tv1),
    )


@dataclass(frozen=True)
class ConcentrationReport:
    mass: float
    mean_x: float
    var_x: float
    w1_to_dirac: float
    defined: bool = True


def concentration_metrics(x, dx: float, n, x_bar: float) -> ConcentrationReport:
    """Trait moments and the Wasserstein-1 distance to the unit Dirac at ``x_bar``.

    For a Dirac target ``int |F - H(. - x_bar)| dx = E|X - x_bar|``, which is
    what is evaluated (the grid density read as point masses with
    trapezoid weights).
    """
    n = np.asarray(n, dtype=float)
    mass = float(np.trapezoid(n, dx=dx))
    if not mass > 0:
        nan = float("nan")
        return ConcentrationReport(mass, nan, nan, nan, defined=False)
    mean = float(np.trapezoid(x * n, dx=dx)) / mass
    var = float(np.trapezoid((x - mean) ** 2 * n, dx=dx)) / mass
    w1 = float(np.trapezoid(np.abs(x - x_bar) * n, dx=dx)) / mass
    return ConcentrationReport(mass, mean, var, w1)


def critical_beta(m: GeneralModel, esd: ESDResult) -> float:
    """``beta*`` where the linearised (P, J) system at the ESD turns oscillatory.

    Linearising ``P' = alpha J``, ``beta J' = Q_S J + Q_rho P`` at a Dirac
    ESD gives eigenvalues with discriminant ``Q_S^2 - 4 alpha beta |Q_rho|``.
    """
    if esd.extinct:
        raise ValueError("critical beta needs a non-extinct ESD")
    f = m.fn
    S, r, x = esd.S_bar, esd.rho_bar, esd.x_bar
    if math.isfinite(esd.x_bar_refined):
        S, r, x = esd.S_bar_refined, esd.rho_bar_refined, esd.x_bar_refined
    alpha = r * float(f["R_S"](x=x, S=S))
    qs = float(f["Q_S"](S=S, rho=r))
    qr = abs(float(f["Q_rho"](S=S, rho=r)))
    if not alpha > 0 or qr == 0:
        raise ValueError(f"degenerate linearisation (alpha={alpha!r}, |Q_rho|={qr!r})")
    return qs * qs / (4 * alpha * qr)


def first_index_after(t, t0: float) -> int:
    return int(np.searchsorted(np.asarray(t), t0))


@dataclass
class RateComparison:
    name: str
    fit: Optional[DecayFit]
    theory: float  # predicted decay rate (positive); fitted slope should be <= -theory
    note: str = ""

    @property
    def fitted_rate(self) -> float:
        return -self.fit.rate if self.fit is not None else float("nan")

    @property
    def relative_gap(self) -> float:
        if self.fit is None or self.theory == 0:
            return float("nan")
        return abs(self.fitted_rate - self.theory) / abs(self.theory)


def compare_rate(name: str, t, y, theory: float, window: Optional[tuple] = None) -> RateComparison:
    """Fit the decay of ``y`` and set it beside the predicted rate."""
    try:
        fit = fit_decay_rate(t, y, window)
    except WindowTooShort:
        above = int(np.sum(np.asarray(y) > NOISE_FLOOR))
        note = "converged to noise floor" if above < 10 else "window too short"
        return RateComparison(name, None, theory, note)
    note = "converged to noise floor" if fit.noise_floor_reached else ""
    return RateComparison(name, fit, theory, note)


@dataclass
class ConvergenceReport:
    kind: str
    rates: list
    tail_ratio_rho2: float
    tail_ratio_rho: float
    gaps: dict
    checks: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def items(self):
        """Flat ``(key, value)`` pairs for key=value output."""
        yield "kind", self.kind
        for r in self.rates:
            yield f"{r.name}.fitted_rate", r.fitted_rate
            yield f"{r.name}.theory_rate", r.theory
            yield f"{r.name}.relative_gap", r.relative_gap
            yield f"{r.name}.r_squared", r.fit.r_squared if r.fit else float("nan")
            if r.note:
                yield f"{r.name}.note", r.note
        yield "tail_ratio_rho2", self.tail_ratio_rho2
        yield "tail_ratio_rho", self.tail_ratio_rho
        for k, v in self.gaps.items():
            yield f"gap.{k}", v
        for c in self.checks:
            yield f"check.{c.name}", "pass" if c.passed else "fail"
            if not c.passed and c.detail:
                yield f"check.{c.name}.detail", c.detail
        for n in self.notes:
            yield "note", n

    def to_text(self) -> str:
        def show(v):
            if isinstance(v, (bool, np.bool_)):
                return "true" if v else "false"
            if isinstance(v, float):
                return repr(v)
            return str(v)

        return "".join(f"{k}={show(v)}\n" for k, v in self.items())
