"""Evolutionary stable distribution (ESD): the monomorphic limit state.

For both model families the nutrient level ``S_bar`` is the root of a
strictly increasing "best fitness" function of ``S``; the surviving trait
is its argmax and the limiting mass follows from the nutrient balance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import BracketError, ChemostatModel, GeneralModel, TraitDomain, bisect_root

PROBES = 64


class MonotonicityError(ArithmeticError):
    """The fitness function decreased somewhere on the probe grid."""


@dataclass
class ESDResult:
    kind: str
    S_bar: float
    x_bar: float
    rho_bar: float
    argmax: tuple  # all node indices achieving the max within tol
    residuals: dict
    unique: bool
    extinct: bool = False
    x_bar_refined: float = float("nan")
    S_bar_refined: float = float("nan")
    rho_bar_refined: float = float("nan")
    notes: list = field(default_factory=list)

    def as_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "S_bar": self.S_bar,
            "x_bar": self.x_bar,
            "rho_bar": self.rho_bar,
            "extinct": self.extinct,
            "unique": self.unique,
            "argmax": " ".join(str(i) for i in self.argmax),
            "S_bar_refined": self.S_bar_refined,
            "x_bar_refined": self.x_bar_refined,
            "rho_bar_refined": self.rho_bar_refined,
        }
        d.update({f"residual.{k}": v for k, v in self.residuals.items()})
        return d

    def to_text(self, digits: Optional[int] = None) -> str:
        out = []
        for k, v in self.as_dict().items():
            if isinstance(v, bool):
                v = str(v).lower()
            elif isinstance(v, float) and digits is not None:
                v = f"{v:.{digits}f}"
            elif isinstance(v, float):
                v = repr(v)
            out.append(f"{k}={v}")
        return "\n".join(out) + "\n"


def _check_monotone(F, lo: float, hi: float, what: str):
    S = np.linspace(lo, hi, PROBES)
    vals = np.array([F(s) for s in S])
    drops = np.diff(vals)
    scale = max(1.0, float(np.max(np.abs(vals))))
    if np.any(drops < -1e-12 * scale):
        i = int(np.argmin(drops))
        raise MonotonicityError(
            f"{what} decreases between S={S[i]!r} and S={S[i + 1]!r}; "
            "the uptake/rate must increase with S"
        )


def _ties(values: np.ndarray, tol: float) -> tuple:
    top = float(np.max(values))
    return tuple(int(i) for i in np.flatnonzero(values >= top - tol))


def parabolic_peak(x: np.ndarray, f: np.ndarray, i: int) -> tuple:
    """Vertex ``(x, f)`` of the parabola through nodes ``i-1, i, i+1``.

    At the grid edges, or for a non-concave triple, the node itself.
    """
    if i <= 0 or i >= len(f) - 1:
        return float(x[i]), float(f[i])
    fl, fc, fr = f[i - 1], f[i], f[i + 1]
    curv = fl - 2 * fc + fr
    if not curv < 0:
        return float(x[i]), float(fc)
    h = x[1] - x[0]
    shift = 0.5 * (fl - fr) / curv
    return float(x[i] + shift * h), float(fc - 0.125 * (fr - fl) ** 2 / curv)


def _refined_max(x, values_at, S) -> float:
    f = values_at(S)
    return parabolic_peak(x, f, int(np.argmax(f)))[1]


def esd_chemostat(m: ChemostatModel, d: TraitDomain, tol: float = 1e-12) -> ESDResult:
    x = d.nodes
    a = m.rendering(x)
    fitness = lambda S: a * np.broadcast_to(m.eta_fn(x=x, S=S), x.shape)
    F = lambda S: float(np.max(fitness(S))) - m.R0
    lo = 0.0
    _check_monotone(F, lo, m.S0, "max_x a(x) eta(x,S)")
    if F(m.S0) < 0:
        res = ESDResult("chemostat", m.S0, float("nan"), 0.0, (), {"max_growth": F(m.S0)},
                        unique=False, extinct=True)
        res.notes.append("max_x a(x) eta(x,S0) < R0: extinction")
        return res
    S_bar = bisect_root(F, lo, m.S0, tol, "max_x a eta - R0")
    vals = fitness(S_bar)
    idx = _ties(vals, tol)
    i = int(np.argmax(vals))
    x_bar = float(x[i])
    rho_bar = float(a[i]) * (m.S0 - S_bar)
    residuals = {"max_growth": F(S_bar), "rho_balance": rho_bar - float(a[i]) * (m.S0 - S_bar)}

    x_ref, _ = parabolic_peak(x, vals, i)
    S_ref = bisect_root(lambda S: _refined_max(x, fitness, S) - m.R0, lo, m.S0, tol, "refined")
    a_ref = float(np.asarray(m.a_fn(x=x_ref), dtype=float))
    return ESDResult(
        "chemostat", S_bar, x_bar, rho_bar, idx, residuals, unique=len(idx) == 1,
        x_bar_refined=x_ref, S_bar_refined=S_ref, rho_bar_refined=a_ref * (m.S0 - S_ref),
    )


def _mass_root(m: GeneralModel, S: float, rho_M: Optional[float], tol: float) -> Optional[float]:
    g = lambda r: m.q(S, r)
    if g(0.0) < 0:
        return None
    hi = rho_M if rho_M is not None else 1.0
    while rho_M is None and g(hi) > 0:
        hi *= 2.0
        if hi > 1e15:
            raise BracketError(f"Q({S!r}, rho) stays positive up to rho = 1e15")
    return bisect_root(g, 0.0, hi, tol, "Q(S_bar, .)")


def esd_general(m: GeneralModel, d: TraitDomain, tol: float = 1e-12, rho_M: Optional[float] = None) -> ESDResult:
    """ESD of the general model.

    ``rho_M`` bounds the mass bracket; by default it is grown until ``Q``
    changes sign.
    """
    x = d.nodes
    S0 = m.S0_effective
    rates = lambda S: m.rate(x, S)
    G = lambda S: float(np.max(rates(S)))
    _check_monotone(G, 0.0, S0, "max_x R(x,S)")
    g0, gS0 = G(0.0), G(S0)
    if gS0 < 0:
        res = ESDResult("general", S0, float("nan"), 0.0, (), {"max_R": gS0, "Q": m.q(S0, 0.0)},
                        unique=False, extinct=True)
        res.notes.append("max_x R(x, S0) < 0: extinction")
        return res
    if g0 > 0:
        raise BracketError(f"max_x R(x,0) = {g0!r} > 0: no nutrient level balances growth")
    S_bar = bisect_root(G, 0.0, S0, tol, "max_x R(x,S)")
    vals = rates(S_bar)
    idx = _ties(vals, tol)
    i = int(np.argmax(vals))
    rho_bar = _mass_root(m, S_bar, rho_M, tol)
    if rho_bar is None:
        res = ESDResult("general", S0, float(x[i]), 0.0, idx, {"max_R": G(S0), "Q": m.q(S0, 0.0)},
                        unique=len(idx) == 1, extinct=True)
        res.notes.append("Q(S_bar, 0) < 0: the mass root is negative, extinction")
        return res
    residuals = {"max_R": G(S_bar), "Q": m.q(S_bar, rho_bar)}

    x_ref, _ = parabolic_peak(x, vals, i)
    S_ref = bisect_root(lambda S: _refined_max(x, rates, S), 0.0, S0, tol, "refined")
    rho_ref = _mass_root(m, S_ref, rho_M, tol)
    return ESDResult(
        "general", S_bar, float(x[i]), rho_bar, idx, residuals, unique=len(idx) == 1,
        x_bar_refined=x_ref, S_bar_refined=S_ref,
        rho_bar_refined=float("nan") if rho_ref is None else rho_ref,
    )


def compute_esd(model, d: TraitDomain, tol: float = 1e-12) -> ESDResult:
    if isinstance(model, ChemostatModel):
        return esd_chemostat(model, d, tol)
    return esd_general(model, d, tol)


@dataclass
class ESDGap:
    S_gap: float
    rho_gap: float
    mean_gap: float
    var_x: float
    max_growth: float  # max_x R(x, S(t_end)) or max_x (-R0 + a eta)
    extinct: bool
    final_rho: float

    def within(self, tol: float) -> bool:
        if self.extinct:
            return self.final_rho <= tol
        return max(self.S_gap, self.rho_gap, abs(self.mean_gap)) <= tol

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def verify_esd(model, result: ESDResult, traj) -> ESDGap:
    """Distances between the final recorded state and the ESD."""
    x = traj.domain.nodes
    S_end, rho_end = float(traj.S[-1]), float(traj.rho[-1])
    if isinstance(model, ChemostatModel):
        growth = float(np.max(model.growth(x, S_end)))
    else:
        growth = float(np.max(model.rate(x, S_end)))
    mean_gap = float(traj.mean_x[-1] - result.x_bar) if not result.extinct else float("nan")
    return ESDGap(
        S_gap=abs(S_end - result.S_bar),
        rho_gap=abs(rho_end - result.rho_bar),
        mean_gap=mean_gap,
        var_x=float(traj.var_x[-1]),
        max_growth=growth,
        extinct=result.extinct,
        final_rho=rho_end,
    )
