"""Positivity-preserving implicit-explicit time stepping on a trait grid.

Each step updates the density first with the nutrient frozen (Patankar
split of gains and losses), then the total mass, then the nutrient with the
new mass (semi-implicit, or an exact root solve when ``beta == 0``).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from .model import BracketError, ChemostatModel, GeneralModel, TraitDomain, bisect_root

log = logging.getLogger(__name__)

QUASI_STATIC_TOL = 1e-13


class SimulationError(ArithmeticError):
    """Positivity, bounds or finiteness violated during a run."""

    def __init__(self, message: str, t: float):
        self.t = t
        super().__init__(f"t={t!r}: {message}")


@dataclass(frozen=True)
class State:
    t: float
    n: np.ndarray
    S: float
    rho: float

    @classmethod
    def from_density(cls, d: TraitDomain, n, S: float, t: float = 0.0) -> "State":
        n = np.asarray(n, dtype=float)
        if n.shape != (d.N,):
            raise ValueError(f"density has shape {n.shape}, expected ({d.N},)")
        if np.any(n < 0):
            raise ValueError("density must be nonnegative")
        return cls(t, n, float(S), d.integrate(n))


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 4e-4
    t_end: float = 40.0
    record_stride: int = 25
    snapshot_stride: int = 0  # 0 = no snapshots; otherwise a multiple of record_stride

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not self.t_end >= 0:
            raise ValueError("t_end must be >= 0")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        if self.snapshot_stride < 0 or (
            self.snapshot_stride and self.snapshot_stride % self.record_stride
        ):
            raise ValueError("snapshot_stride must be 0 or a multiple of record_stride")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass
class Trajectory:
    kind: str
    domain: TraitDomain
    times: np.ndarray
    S: np.ndarray
    rho: np.ndarray
    mean_x: np.ndarray
    var_x: np.ndarray
    final: State
    snapshot_times: np.ndarray = field(default_factory=lambda: np.empty(0))
    snapshots: Optional[np.ndarray] = None
    dt: float = 0.0

    def __len__(self) -> int:
        return len(self.times)

    @property
    def has_full_snapshots(self) -> bool:
        return self.snapshots is not None and np.array_equal(self.snapshot_times, self.times)


def gaussian_initial(d: TraitDomain, center: float, width_coeff: float, target_mass: float) -> np.ndarray:
    """``C exp(-width_coeff (x-center)^2)`` scaled to trapezoid mass ``target_mass``."""
    if not target_mass > 0:
        raise ValueError("target_mass must be > 0")
    shape = np.exp(-width_coeff * (d.nodes - center) ** 2)
    mass = d.integrate(shape)
    if not mass > 0:
        raise ValueError("unnormalised initial mass underflows to zero")
    n = shape * (target_mass / mass)
    # one correction pass absorbs the rounding of the scale factor
    return n * (target_mass / d.integrate(n))


def _patankar(n: np.ndarray, g: np.ndarray, dt: float) -> np.ndarray:
    return n * (1.0 + dt * np.maximum(g, 0.0)) / (1.0 + dt * np.maximum(-g, 0.0))


def step_general(m: GeneralModel, s: State, dt: float, d: TraitDomain) -> State:
    x = d.nodes
    n = _patankar(s.n, m.rate(x, s.S), dt)
    rho = d.integrate(n)
    if m.beta > 0:
        k = dt / m.beta
        q = m.q(s.S, rho)
        qs = float(m.fn["Q_S"](S=s.S, rho=rho))
        denom = 1.0 - k * qs
        if not denom > 0:
            raise SimulationError(f"semi-implicit denominator {denom!r} <= 0 (Q_S={qs!r})", s.t + dt)
        S = s.S + k * q / denom
    else:
        S = quasi_static_nutrient(m, rho, s.t + dt)
    return State(s.t + dt, n, S, rho)


def quasi_static_nutrient(m: GeneralModel, rho: float, t: float = float("nan")) -> float:
    try:
        return bisect_root(lambda S: m.q(S, rho), 0.0, m.S0_effective, QUASI_STATIC_TOL, "Q(., rho)")
    except BracketError as exc:
        raise SimulationError(str(exc), t) from None


def step_chemostat(m: ChemostatModel, s: State, dt: float, d: TraitDomain, a: Optional[np.ndarray] = None) -> State:
    x = d.nodes
    a = m.rendering(x) if a is None else a
    eta = np.broadcast_to(m.eta_fn(x=x, S=s.S), x.shape)
    n = _patankar(s.n, -m.R0 + a * eta, dt)
    rho = d.integrate(n)
    eta_S = np.broadcast_to(m.eta_S_fn(x=x, S=s.S), x.shape)
    uptake = d.integrate(n * eta)
    uptake_S = d.integrate(n * eta_S)
    denom = 1.0 + dt * m.R0 + dt * uptake_S
    if not denom > 0:
        raise SimulationError(f"nutrient denominator {denom!r} <= 0", s.t + dt)
    S = (s.S + dt * m.R0 * m.S0 - dt * (uptake - s.S * uptake_S)) / denom
    return State(s.t + dt, n, S, rho)


def trait_moments(x: np.ndarray, n: np.ndarray, dx: float) -> tuple:
    mass = float(np.trapezoid(n, dx=dx))
    if mass <= 0:
        return float("nan"), float("nan")
    mean = float(np.trapezoid(x * n, dx=dx)) / mass
    var = float(np.trapezoid((x - mean) ** 2 * n, dx=dx)) / mass
    return mean, var


Model = Union[GeneralModel, ChemostatModel]


def simulate(
    model: Model, d: TraitDomain, init: State, cfg: SolverConfig, rho_max: Optional[float] = None
) -> Trajectory:
    """Step ``init`` to ``cfg.t_end``, recording every ``record_stride`` steps.

    With ``beta = 0`` the initial nutrient is replaced by the root of
    ``Q(., rho(0))``. Raises :class:`SimulationError` if the density turns negative, the
    nutrient leaves ``(0, S0_effective]``, the mass exceeds ``rho_max``
    (when given) or anything becomes non-finite.
    """
    S_cap = model.S0_effective * (1 + 1e-9)
    x, dx = d.nodes, d.dx
    if isinstance(model, ChemostatModel):
        a = model.rendering(x)
        step = lambda s: step_chemostat(model, s, cfg.dt, d, a)
    else:
        step = lambda s: step_general(model, s, cfg.dt, d)

    n_steps = cfg.n_steps
    n_rec = n_steps // cfg.record_stride + 1
    times = np.empty(n_rec)
    S = np.empty(n_rec)
    rho = np.empty(n_rec)
    mean = np.empty(n_rec)
    var = np.empty(n_rec)
    snaps, snap_t = [], []

    def record(j, s, k):
        times[j], S[j], rho[j] = s.t, s.S, s.rho
        mean[j], var[j] = trait_moments(x, s.n, dx)
        if cfg.snapshot_stride and k % cfg.snapshot_stride == 0:
            snaps.append(s.n.copy())
            snap_t.append(s.t)

    if isinstance(model, GeneralModel) and model.beta == 0:
        # the quasi-static state lives on Q(S, rho) = 0; the given S(0) is dropped
        init = replace(init, S=quasi_static_nutrient(model, init.rho, init.t))
    _validate(init, S_cap, check_n=True, rho_max=rho_max)
    s = init
    record(0, s, 0)
    j = 1
    for k in range(1, n_steps + 1):
        s = step(s)
        s = replace(s, t=init.t + k * cfg.dt)
        if k % cfg.record_stride == 0:
            _validate(s, S_cap, check_n=True, rho_max=rho_max)
            record(j, s, k)
            j += 1
        else:
            _validate(s, S_cap, check_n=False, rho_max=rho_max)
    if n_steps % cfg.record_stride:
        _validate(s, S_cap, check_n=True, rho_max=rho_max)
    return Trajectory(
        kind=model.kind,
        domain=d,
        times=times[:j],
        S=S[:j],
        rho=rho[:j],
        mean_x=mean[:j],
        var_x=var[:j],
        final=s,
        snapshot_times=np.asarray(snap_t),
        snapshots=np.asarray(snaps) if snaps else None,
        dt=cfg.dt,
    )


def _validate(s: State, S_cap: float, check_n: bool, rho_max: Optional[float] = None):
    if not (np.isfinite(s.S) and np.isfinite(s.rho)):
        raise SimulationError(f"non-finite state (S={s.S!r}, rho={s.rho!r})", s.t)
    if not 0 < s.S <= S_cap:
        raise SimulationError(f"nutrient S={s.S!r} left (0, {S_cap!r}]", s.t)
    if check_n and (np.any(s.n < 0) or not np.all(np.isfinite(s.n))):
        raise SimulationError("density lost positivity or finiteness", s.t)
    if rho_max is not None and s.rho > rho_max:
        raise SimulationError(f"mass rho={s.rho!r} exceeds the a-priori bound {rho_max!r}", s.t)
