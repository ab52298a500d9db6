"""Model definitions, sampled hypothesis checks and a-priori constants."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy import optimize

from .exprlang import Expression, compile_expr, differentiate, parse, to_text

DEFAULT_SAMPLES = 256


class ModelError(ValueError):
    """Invalid model definition."""


class BracketError(ArithmeticError):
    """A monotone root search had no sign change on its bracket."""


def trapezoid(y, dx: float) -> float:
    return float(np.trapezoid(y, dx=dx))


def bisect_root(f, lo: float, hi: float, tol: float = 1e-12, what: str = "function") -> float:
    """Root of a continuous ``f`` on ``[lo, hi]`` by bisection."""
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if np.sign(flo) == np.sign(fhi):
        raise BracketError(
            f"{what}: no sign change on [{lo!r}, {hi!r}] (f(lo)={flo!r}, f(hi)={fhi!r})"
        )
    return float(optimize.bisect(f, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=400))


def _as_expr(e) -> Expression:
    return parse(e) if isinstance(e, str) else e


def _require_vars(name: str, e: Expression, allowed: set):
    extra = set(e.variables()) - allowed
    if extra:
        raise ModelError(f"{name} may only use {sorted(allowed)}, found {sorted(extra)}")


@dataclass(frozen=True)
class TraitDomain:
    x_min: float
    x_max: float
    N: int

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise ModelError("x_min must be < x_max")
        if self.N < 2:
            raise ModelError("N must be >= 2")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.N - 1)

    @cached_property
    def nodes(self) -> np.ndarray:
        x = self.x_min + np.arange(self.N) * self.dx
        x.setflags(write=False)
        return x

    def integrate(self, y) -> float:
        return trapezoid(y, self.dx)


@dataclass(frozen=True)
class ChemostatModel:
    """Chemostat with rendering factor: growth ``-R0 + a(x) eta(x,S)``."""

    R0: float
    S0: float
    a: Expression
    eta: Expression

    def __post_init__(self):
        object.__setattr__(self, "a", _as_expr(self.a))
        object.__setattr__(self, "eta", _as_expr(self.eta))
        if not self.R0 > 0:
            raise ModelError("R0 must be > 0")
        if not self.S0 > 0:
            raise ModelError("S0 must be > 0")
        _require_vars("a", self.a, {"x"})
        _require_vars("eta", self.eta, {"x", "S"})

    kind = "chemostat"

    @cached_property
    def eta_S(self) -> Expression:
        return differentiate(self.eta, "S")

    @cached_property
    def a_fn(self):
        return compile_expr(self.a)

    @cached_property
    def eta_fn(self):
        return compile_expr(self.eta)

    @cached_property
    def eta_S_fn(self):
        return compile_expr(self.eta_S)

    def rendering(self, x: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.a_fn(x=x), dtype=float), np.shape(x))

    def growth(self, x, S):
        """Per-capita growth rate ``-R0 + a(x) eta(x,S)``."""
        return -self.R0 + self.rendering(x) * self.eta_fn(x=x, S=S)

    @property
    def S0_effective(self) -> float:
        return self.S0

    def describe(self) -> dict:
        return {"R0": self.R0, "S0": self.S0, "a": to_text(self.a), "eta": to_text(self.eta)}


@dataclass(frozen=True)
class GeneralModel:
    """``dn/dt = n R(x,S)``, ``beta dS/dt = Q(S, rho)``, ``rho = int n dx``.

    ``S0`` is optional; when omitted the effective upper nutrient level is the
    root of ``Q(., 0)``.
    """

    beta: float
    R: Expression
    Q: Expression
    S0: Optional[float] = None

    kind = "general"

    def __post_init__(self):
        object.__setattr__(self, "R", _as_expr(self.R))
        object.__setattr__(self, "Q", _as_expr(self.Q))
        if not self.beta >= 0:
            raise ModelError("beta must be >= 0")
        if self.S0 is not None and not self.S0 > 0:
            raise ModelError("S0 must be > 0")
        _require_vars("R", self.R, {"x", "S"})
        _require_vars("Q", self.Q, {"S", "rho"})

    def with_beta(self, beta: float) -> "GeneralModel":
        return GeneralModel(beta, self.R, self.Q, self.S0)

    @cached_property
    def R_S(self) -> Expression:
        return differentiate(self.R, "S")

    @cached_property
    def R_x(self) -> Expression:
        return differentiate(self.R, "x")

    @cached_property
    def R_xx(self) -> Expression:
        return differentiate(self.R_x, "x")

    @cached_property
    def Q_S(self) -> Expression:
        return differentiate(self.Q, "S")

    @cached_property
    def Q_rho(self) -> Expression:
        return differentiate(self.Q, "rho")

    @cached_property
    def fn(self):
        """Compiled callables keyed by derivative name."""
        names = ("R", "R_S", "R_x", "R_xx", "Q", "Q_S", "Q_rho")
        return {k: compile_expr(getattr(self, k)) for k in names}

    def rate(self, x, S):
        return np.broadcast_to(np.asarray(self.fn["R"](x=x, S=S), dtype=float), np.shape(x))

    def q(self, S, rho) -> float:
        return float(self.fn["Q"](S=S, rho=rho))

    @cached_property
    def S0_effective(self) -> float:
        if self.S0 is not None:
            return float(self.S0)
        return nutrient_ceiling(self)

    def describe(self) -> dict:
        d = {"beta": self.beta, "R": to_text(self.R), "Q": to_text(self.Q)}
        if self.S0 is not None:
            d["S0"] = self.S0
        return d


def nutrient_ceiling(m: GeneralModel, tol: float = 1e-12) -> float:
    """Root of ``Q(., 0)``; the bracket is grown geometrically from [0, 1]."""
    q0 = lambda S: m.q(S, 0.0)
    if not q0(0.0) > 0:
        raise BracketError(f"Q(0, 0) = {q0(0.0)!r} is not positive")
    hi = 1.0
    while q0(hi) > 0:
        hi *= 2.0
        if hi > 1e12:
            raise BracketError("Q(S, 0) stays positive up to S = 1e12")
    return bisect_root(q0, 0.0, hi, tol, "Q(., 0)")


# --------------------------------------------------------------------------
# Assumption report


@dataclass
class HypothesisCheck:
    name: str
    passed: bool
    worst: float
    where: dict = field(default_factory=dict)
    informational: bool = False
    note: str = ""


@dataclass
class AssumptionReport:
    kind: str
    checks: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)
    samples: int = DEFAULT_SAMPLES
    notes: list = field(default_factory=list)

    def add(self, check: HypothesisCheck):
        self.checks[check.name] = check

    @property
    def holds(self) -> bool:
        return all(c.passed for c in self.checks.values() if not c.informational)

    def failed(self) -> list:
        return [c for c in self.checks.values() if not c.passed and not c.informational]

    def __getitem__(self, key):
        return self.constants[key]

    def to_text(self) -> str:
        lines = [f"kind={self.kind}", f"holds={str(self.holds).lower()}", f"samples={self.samples}"]
        for c in self.checks.values():
            tag = "info" if c.informational else "check"
            status = "pass" if c.passed else "fail"
            where = ",".join(f"{k}:{v!r}" for k, v in c.where.items())
            lines.append(f"{tag}.{c.name}={status} worst={c.worst!r}" + (f" at={where}" if where else ""))
        for k, v in self.constants.items():
            lines.append(f"{k}={v!r}")
        for n in self.notes:
            lines.append(f"note={n}")
        return "\n".join(lines) + "\n"

    def to_csv_rows(self) -> list:
        rows = [("section", "name", "value", "detail")]
        for c in self.checks.values():
            where = ";".join(f"{k}={v!r}" for k, v in c.where.items())
            rows.append(("check", c.name, "pass" if c.passed else "fail", f"worst={c.worst!r};{where}"))
        for k, v in self.constants.items():
            rows.append(("constant", k, repr(v), ""))
        return rows


def _worst(values: np.ndarray, axes: dict, mode: str):
    """Return (value, location) of the min or max of a sampled grid."""
    idx = np.unravel_index(np.argmin(values) if mode == "min" else np.argmax(values), values.shape)
    loc = {name: float(grid[i]) for (name, grid), i in zip(axes.items(), idx)}
    return float(values[idx]), loc


def _grid_eval(fn, shape, **kw) -> np.ndarray:
    return np.broadcast_to(np.asarray(fn(**kw), dtype=float), shape).copy()


def check_chemostat_assumptions(
    m: ChemostatModel, d: TraitDomain, S_samples: int = DEFAULT_SAMPLES
) -> AssumptionReport:
    """Sample the chemostat hypotheses on ``{x_i} x (0, S0]``.

    Failures are recorded with the witnessing sample point; nothing raises.
    """
    rep = AssumptionReport("chemostat", samples=S_samples)
    x = d.nodes
    S = np.linspace(m.S0 / S_samples, m.S0, S_samples)
    X, SS = np.meshgrid(x, S, indexing="ij")
    axes = {"x": x, "S": S}

    eta_S0 = _grid_eval(m.eta_fn, x.shape, x=x, S=m.S0)
    v, loc = _worst(eta_S0 - m.R0, {"x": x}, "min")
    rep.add(HypothesisCheck("uptake_exceeds_dilution", v > 0, v, loc))

    eta_0 = _grid_eval(m.eta_fn, x.shape, x=x, S=0.0)
    v, loc = _worst(np.abs(eta_0), {"x": x}, "max")
    rep.add(HypothesisCheck("uptake_vanishes_at_zero", v <= 1e-12, v, loc))

    etaS = _grid_eval(m.eta_S_fn, X.shape, x=X, S=SS)
    k_lo, loc_lo = _worst(etaS, axes, "min")
    k_hi, _ = _worst(etaS, axes, "max")
    rep.add(HypothesisCheck("uptake_increasing", k_lo > 0, k_lo, loc_lo))

    a = m.rendering(x)
    a_m, loc_a = _worst(a, {"x": x}, "min")
    a_M = float(np.max(a))
    rep.add(HypothesisCheck("rendering_bounded", a_m > 0, a_m, loc_a))

    # what the ESD root actually needs; the plain check above omits a(x)
    v, loc = _worst(a * eta_S0, {"x": x}, "max")
    rep.add(HypothesisCheck("rendered_uptake_exceeds_dilution", v > m.R0, v - m.R0, loc,
                            informational=True))

    rep.constants.update(a_m=a_m, a_M=a_M, K_eta_lo=k_lo, K_eta_hi=k_hi, S0_effective=m.S0)
    rep.notes.append(f"hypotheses sampled on trait window [{d.x_min!r}, {d.x_max!r}] only")
    return rep


def check_general_assumptions(
    m: GeneralModel,
    d: TraitDomain,
    S_range: Optional[tuple] = None,
    rho_range: tuple = (0.0, 10.0),
    samples: int = DEFAULT_SAMPLES,
) -> AssumptionReport:
    """Sample the hypotheses on ``Q`` and ``R`` and estimate their constants.

    ``S_range`` defaults to ``[0, S0_effective]``; the ``Q_S``/``Q_rho``
    bounds are taken over ``S_range x rho_range``. ``R`` is always sampled
    over ``{x_i} x [0, S0_effective]``.
    """
    if not (rho_range[0] == 0.0 and rho_range[1] > 0):
        raise ValueError("rho_range must be [0, rho_probe] with rho_probe > 0")
    rep = AssumptionReport("general", samples=samples)
    S0e = m.S0_effective
    S_lo, S_hi = S_range if S_range is not None else (0.0, S0e)
    S_box = np.linspace(S_lo, S_hi, samples)
    rho = np.linspace(rho_range[0], rho_range[1], samples)
    SS, RR = np.meshgrid(S_box, rho, indexing="ij")
    box_axes = {"S": S_box, "rho": rho}
    f = m.fn

    q0 = _grid_eval(f["Q"], rho.shape, S=0.0, rho=rho)
    v, loc = _worst(q0, {"rho": rho}, "min")
    rep.add(HypothesisCheck("Q_positive_at_S_zero", v > 0, v, loc))

    qS0 = _grid_eval(f["Q"], rho.shape, S=S0e, rho=rho)
    v, loc = _worst(qS0, {"rho": rho}, "max")
    rep.add(HypothesisCheck("Q_nonpositive_at_S0", v <= 1e-12, v, loc))

    negQS = -_grid_eval(f["Q_S"], SS.shape, S=SS, rho=RR)
    negQr = -_grid_eval(f["Q_rho"], SS.shape, S=SS, rho=RR)
    kqs, loc_s = _worst(negQS, box_axes, "min")
    kqr, loc_r = _worst(negQr, box_axes, "min")
    rep.add(HypothesisCheck("Q_S_bounded_below_zero", kqs > 0, kqs, loc_s))
    rep.add(HypothesisCheck("Q_rho_bounded_below_zero", kqr > 0, kqr, loc_r))
    K_Q = min(kqs, kqr)

    x = d.nodes
    S_full = np.linspace(0.0, S0e, samples)
    X, SF = np.meshgrid(x, S_full, indexing="ij")
    r_axes = {"x": x, "S": S_full}
    RS = _grid_eval(f["R_S"], X.shape, x=X, S=SF)
    k1_lo, loc1 = _worst(RS, r_axes, "min")
    k1_hi = float(RS.max())
    rep.add(HypothesisCheck("R_S_bounded", k1_lo > 0, k1_lo, loc1))

    w2 = np.maximum.reduce([
        np.abs(_grid_eval(f[k], X.shape, x=X, S=SF)) for k in ("R", "R_x", "R_xx")
    ])
    K2, loc2 = _worst(w2, r_axes, "max")
    rep.add(HypothesisCheck("R_W2inf_bounded", bool(np.isfinite(K2)), K2, loc2))

    K4 = float(np.max(_grid_eval(f["Q"], S_full.shape, S=S_full, rho=0.0)))
    rep.constants.update(
        K_Q=K_Q, K_Q_S=kqs, K_Q_rho=kqr, K1_lo=k1_lo, K1_hi=k1_hi, K2=K2,
        K3=K_Q, K4=K4, S0_effective=S0e, S_box_lo=float(S_lo), S_box_hi=float(S_hi),
        rho_probe=float(rho_range[1]),
    )
    rep.notes.append(f"hypotheses sampled on trait window [{d.x_min!r}, {d.x_max!r}] only")
    return rep


def estimate_rho_max(m: GeneralModel, report: AssumptionReport, rho_init: float, S_init: float) -> float:
    """A-priori upper bound on the total population.

    Uses ``d/dt (ln rho + beta S) <= K2 + K1_hi S0 + K4 - K3 e^{-beta S0} rho``
    and returns ``exp(max(ln rho_init + beta S_init, C2))`` with ``C2`` the
    root of the right-hand side.
    """
    K3 = report["K3"]
    if not K3 > 0:
        raise ValueError(f"K3 = {K3!r} must be positive")
    S0 = report["S0_effective"]
    C2 = m.beta * S0 + math.log((report["K2"] + report["K1_hi"] * S0 + report["K4"]) / K3)
    return math.exp(max(math.log(rho_init) + m.beta * S_init, C2))


def compute_S_m(m: GeneralModel, rho_M: float, tol: float = 1e-12) -> float:
    """Nutrient floor: the root of ``S -> Q(S, rho_M)``."""
    return bisect_root(lambda S: m.q(S, rho_M), 0.0, m.S0_effective, tol, "Q(., rho_M)")


@dataclass(frozen=True)
class BetaSmallness:
    holds: bool
    beta_max: float
    ratio_min: float  # min |Q_S|/|Q_rho| over the box
    rhs_max: float  # max K1_hi rho_M / |Q_S| over the box


def check_beta_smallness(
    m: GeneralModel, report: AssumptionReport, rho_M: float, S_m: float, samples: int = DEFAULT_SAMPLES
) -> BetaSmallness:
    """Largest ``beta`` satisfying the smallness condition on ``[0,rho_M] x [S_m,S0]``."""
    S = np.linspace(S_m, m.S0_effective, samples)
    rho = np.linspace(0.0, rho_M, samples)
    SS, RR = np.meshgrid(S, rho, indexing="ij")
    qs = np.abs(_grid_eval(m.fn["Q_S"], SS.shape, S=SS, rho=RR))
    qr = np.abs(_grid_eval(m.fn["Q_rho"], SS.shape, S=SS, rho=RR))
    if np.any(qr == 0) or np.any(qs == 0):
        raise ZeroDivisionError("|Q_rho| or |Q_S| vanishes on the smallness box")
    L = float(np.min(qs / qr))
    rhs = float(np.max(report["K1_hi"] * rho_M / qs))
    beta_max = L / (4.0 * rhs)
    return BetaSmallness(m.beta <= beta_max, beta_max, L, rhs)


def mu_upper_bound(m: GeneralModel, rho_M: float, S_m: float, samples: int = DEFAULT_SAMPLES) -> float:
    """``(1/beta) max |Q_S|/|Q_rho|`` over ``[0,rho_M] x [S_m,S0]``."""
    if not m.beta > 0:
        raise ValueError("mu bound needs beta > 0")
    S = np.linspace(S_m, m.S0_effective, samples)
    rho = np.linspace(0.0, rho_M, samples)
    SS, RR = np.meshgrid(S, rho, indexing="ij")
    qs = np.abs(_grid_eval(m.fn["Q_S"], SS.shape, S=SS, rho=RR))
    qr = np.abs(_grid_eval(m.fn["Q_rho"], SS.shape, S=SS, rho=RR))
    return float(np.max(qs / qr)) / m.beta


def boundary_mass_fraction(n: np.ndarray, d: TraitDomain, cells: int = 5) -> float:
    """Fraction of the total mass within ``cells`` nodes of either edge."""
    total = d.integrate(n)
    if total <= 0:
        return 0.0
    k = min(cells + 1, d.N)
    edge = d.integrate(n[:k]) + d.integrate(n[-k:])
    return edge / total
