import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from esdlab.config import load_config
from esdlab.diagnostics import (
    MissingSnapshots,
    WindowTooShort,
    chemostat_series,
    check_envelope,
    check_mu_window,
    compare_rate,
    concentration_metrics,
    critical_beta,
    fit_decay_rate,
    general_series,
    riccati_implicit,
    tv_and_oscillation,
    turning_points,
)
from esdlab.equilibrium import esd_general
from esdlab.model import ChemostatModel, GeneralModel, TraitDomain
from esdlab.solver import SolverConfig, State, gaussian_initial, simulate

from .conftest import CHEMO_ETA, PAPER_Q, PAPER_R

ODD_UNIT = TraitDomain(0.0, 1.0, 1001)
CHEMO_DOMAIN = TraitDomain(-2.0, 2.0, 801)
BETA_STAR = 289 / 4032


def _full(dt, t_end, stride):
    return SolverConfig(dt=dt, t_end=t_end, record_stride=stride, snapshot_stride=stride)


def esd_state(d=ODD_UNIT):
    """A grid delta of mass 7/3 at x = 0.5 with S = 3: the fig4 model ESD."""
    n = np.zeros(d.N)
    i = int(np.argmin(np.abs(d.nodes - 0.5)))
    n[i] = (7 / 3) / d.dx
    return State.from_density(d, n, 3.0)


class TestChemostatSeries:
    def test_empty_population(self):
        m = ChemostatModel(1.0, 2.0, "1", CHEMO_ETA)
        init = State(0.0, np.zeros(CHEMO_DOMAIN.N), 0.5, 0.0)
        tr = simulate(m, CHEMO_DOMAIN, init, _full(1e-3, 3.0, 10))
        s = chemostat_series(m, tr)
        np.testing.assert_allclose(s.u, tr.S - 2.0, atol=1e-15)
        fit = fit_decay_rate(tr.times, np.abs(s.u))
        # implicit Euler decays at ln(1 + dt R0)/dt
        assert -fit.rate == pytest.approx(math.log1p(1e-3) / 1e-3, rel=1e-9)
        assert -fit.rate == pytest.approx(1.0, rel=1e-3)

    def test_unit_rendering_identity(self):
        m = ChemostatModel(1.0, 2.0, "1", CHEMO_ETA)
        init = State.from_density(CHEMO_DOMAIN, gaussian_initial(CHEMO_DOMAIN, 1.0, 10.0, 1.0), 0.5)
        tr = simulate(m, CHEMO_DOMAIN, init, _full(1e-3, 1.0, 10))
        s = chemostat_series(m, tr)
        np.testing.assert_allclose(s.u, tr.rho + tr.S - 2.0, atol=1e-12)
        np.testing.assert_array_equal(s.J_neg, np.maximum(0.0, -s.J))

    def test_u_bounded_by_exponential(self, chemo_cfg):
        c = chemo_cfg.with_solver(t_end=10.0)
        m = c.build_model()
        tr = simulate(m, c.domain, c.initial_state(), c.solver)
        s = chemostat_series(m, tr)
        env = abs(s.u[0]) * np.exp(-m.R0 * tr.times)
        assert np.all(np.abs(s.u) <= env * 1.02 + 1e-12)

    def test_J_decomposition(self, chemo_cfg):
        # J + dS/dt = -R0 u(0) exp(-R0 t), finite-difference tolerance 1e-3 at dt = 1e-3
        c = chemo_cfg.with_solver(dt=1e-3, t_end=10.0)
        m = c.build_model()
        tr = simulate(m, c.domain, c.initial_state(), c.solver)
        s = chemostat_series(m, tr)
        gap = s.J + np.gradient(tr.S, tr.times) + m.R0 * s.u[0] * np.exp(-m.R0 * tr.times)
        assert np.max(np.abs(gap)) <= 1e-3

    def test_J_decomposition_defect_is_first_order(self, chemo_cfg):
        gaps = []
        for dt, stride in [(1e-3, 10), (5e-4, 20)]:
            c = chemo_cfg.with_solver(dt=dt, t_end=2.0, record_stride=stride, snapshot_stride=stride)
            m = c.build_model()
            tr = simulate(m, c.domain, c.initial_state(), c.solver)
            s = chemostat_series(m, tr)
            gap = s.J + np.gradient(tr.S, tr.times) + m.R0 * s.u[0] * np.exp(-m.R0 * tr.times)
            gaps.append(np.max(np.abs(gap[1:-1])))
        assert gaps[0] / gaps[1] == pytest.approx(2.0, rel=0.2)

    def test_snapshots_required(self):
        m = ChemostatModel(1.0, 2.0, "1", CHEMO_ETA)
        init = State.from_density(CHEMO_DOMAIN, gaussian_initial(CHEMO_DOMAIN, 1.0, 10.0, 1.0), 0.5)
        tr = simulate(m, CHEMO_DOMAIN, init, SolverConfig(dt=1e-3, t_end=0.1, record_stride=10))
        with pytest.raises(MissingSnapshots):
            chemostat_series(m, tr)


class TestGeneralSeries:
    def test_stationary_at_esd(self):
        # beta below beta* so that mu, and hence W, is defined
        m = GeneralModel(0.05, PAPER_R, PAPER_Q)
        tr = simulate(m, ODD_UNIT, esd_state(), _full(1e-3, 0.5, 10))
        s = general_series(m, tr)
        np.testing.assert_allclose(s.P, 0.0, atol=1e-12)
        np.testing.assert_allclose(s.gamma, 0.0, atol=1e-20)
        np.testing.assert_allclose(s.W, 0.0, atol=1e-10)
        np.testing.assert_allclose(s.alpha, 4 * 7 / 3, rtol=1e-12)

    def test_discriminant_vanishes_at_critical_beta(self):
        m = GeneralModel(BETA_STAR, PAPER_R, PAPER_Q)
        tr = simulate(m, ODD_UNIT, esd_state(), _full(1e-3, 0.05, 10))
        s = general_series(m, tr)
        # alpha = 28/3, |Q_S| = 17/6, |Q_rho| = 3
        np.testing.assert_allclose(s.discriminant, 0.0, atol=1e-11)
        np.testing.assert_allclose(s.Q_S, -17 / 6, rtol=1e-12)
        np.testing.assert_allclose(s.Q_rho, -3.0, rtol=1e-12)

    def test_quasi_static_branch_omits_nutrient_quantities(self):
        m = GeneralModel(0.0, PAPER_R, PAPER_Q)
        init = State.from_density(ODD_UNIT, gaussian_initial(ODD_UNIT, 0.5, 200.0, 5.0), 5.0)
        tr = simulate(m, ODD_UNIT, init, _full(1e-3, 0.1, 10))
        s = general_series(m, tr)
        assert s.mu is None and s.J is None and s.W is None and s.discriminant is None
        row = next(iter(s.rows()))
        assert row[8] is None and row[6] is not None  # mu absent, alpha present

    def test_alpha_bounds(self, paper_cfg):
        c = paper_cfg.with_solver(t_end=2.0)
        m = c.build_model()
        tr = simulate(m, c.domain, c.initial_state(), c.solver)
        s = general_series(m, tr)
        # R_S = 4 everywhere, so alpha = 4 rho exactly up to quadrature
        np.testing.assert_allclose(s.alpha, 4 * tr.rho, rtol=1e-12)
        assert np.all(s.gamma >= 0)

    def test_P_matches_right_hand_side(self, paper_cfg):
        c = paper_cfg.with_solver(t_end=2.0)
        m = c.build_model()
        tr = simulate(m, c.domain, c.initial_state(), c.solver)
        s = general_series(m, tr)
        scale = np.max(np.abs(s.P_rhs))
        assert np.max(np.abs(s.P - s.P_rhs)[1:-1]) < 0.05 * scale

    def test_unknown_mu_policy(self):
        m = GeneralModel(1.0, PAPER_R, PAPER_Q)
        tr = simulate(m, ODD_UNIT, esd_state(), _full(1e-3, 0.05, 10))
        with pytest.raises(ValueError):
            general_series(m, tr, mu0_policy="random")


class TestRiccati:
    def _const(self, k, qs, qr, alpha):
        return np.full(k, qs), np.full(k, qr), np.full(k, alpha)

    def test_upper_root_is_fixed(self):
        beta, qs, qr, alpha = 0.1, 3.0, 2.0, 1.0
        mu_p = (qs + math.sqrt(qs * qs - 4 * alpha * beta * qr)) / (2 * beta * qr)
        t = np.linspace(0, 1, 101)
        mu = riccati_implicit(t, *self._const(101, qs, qr, alpha), beta, mu_p)
        np.testing.assert_allclose(mu, mu_p, rtol=1e-12)

    @pytest.mark.parametrize("start", [0.3, 0.9, 1.5, 5.0])
    def test_attracted_to_upper_root(self, start):
        beta, qs, qr, alpha = 0.1, 3.0, 2.0, 1.0
        root = math.sqrt(qs * qs - 4 * alpha * beta * qr)
        mu_m, mu_p = (qs - root) / (2 * beta * qr), (qs + root) / (2 * beta * qr)
        t = np.linspace(0, 20, 2001)
        mu0 = mu_m + start * (mu_p - mu_m)
        mu = riccati_implicit(t, *self._const(2001, qs, qr, alpha), beta, mu0)
        assert mu[-1] == pytest.approx(mu_p, rel=1e-9)
        assert np.all(np.diff(mu) * np.sign(mu_p - mu0) >= -1e-12)

    def test_stiff_steps_stay_bounded(self):
        # dt |Q_S| / beta = 1e4: the linearised recurrence would blow up
        beta, qs, qr, alpha = 1e-6, 3.0, 2.0, 1.0
        t = np.linspace(0, 1, 101)
        mu_p = (qs + math.sqrt(qs * qs - 4 * alpha * beta * qr)) / (2 * beta * qr)
        mu = riccati_implicit(t, *self._const(101, qs, qr, alpha), beta, 0.5 * mu_p)
        assert np.all(np.isfinite(mu)) and mu[-1] == pytest.approx(mu_p, rel=1e-6)


class TestMuWindow:
    def test_complex_roots_reported(self):
        m = GeneralModel(2 * BETA_STAR, PAPER_R, PAPER_Q)
        tr = simulate(m, ODD_UNIT, esd_state(), _full(1e-3, 0.05, 10))
        res = check_mu_window(general_series(m, tr), mu_M=1e9)
        assert not res.passed and res.detail == "complex-root regime"
        assert res.first_violation_time == 0.0

    def test_empty_population_is_trivial(self):
        m = GeneralModel(0.5, PAPER_R, PAPER_Q)
        init = State(0.0, np.zeros(101), 5.0, 0.0)
        d = TraitDomain(0.0, 1.0, 101)
        tr = simulate(m, d, init, _full(1e-2, 1.0, 1))
        s = general_series(m, tr)
        np.testing.assert_allclose(s.mu_minus, 0.0, atol=1e-15)
        assert check_mu_window(s, mu_M=1e6).passed

    def test_small_beta_run_passes(self, paper_cfg):
        c = paper_cfg.with_beta(0.02).with_solver(t_end=5.0)
        m = c.build_model()
        tr = simulate(m, c.domain, c.initial_state(), c.solver)
        s = general_series(m, tr)
        res = check_mu_window(s, mu_M=float(np.max(-s.Q_S / -s.Q_rho)) / 0.02 * 10)
        assert res.passed, res.detail


class TestFits:
    def test_exact_exponential(self):
        t = np.linspace(0, 3, 50)
        fit = fit_decay_rate(t, 4 * np.exp(-2 * t))
        assert fit.rate == pytest.approx(-2.0, abs=1e-12)
        assert fit.r_squared == pytest.approx(1.0, abs=1e-10)

    def test_constant(self):
        fit = fit_decay_rate(np.linspace(0, 1, 20), np.full(20, 3.0))
        assert fit.rate == pytest.approx(0.0, abs=1e-14)

    def test_short_window(self):
        with pytest.raises(WindowTooShort):
            fit_decay_rate(np.linspace(0, 1, 9), np.ones(9))

    def test_noise_floor(self):
        t = np.linspace(0, 40, 400)
        y = np.exp(-t)  # drops below 1e-13 near t = 30
        fit = fit_decay_rate(t, y)
        assert fit.noise_floor_reached and fit.rate == pytest.approx(-1.0, abs=1e-9)
        cmp = compare_rate("u", t, np.zeros_like(t), 1.0)
        assert cmp.fit is None and cmp.note == "converged to noise floor"


class TestEnvelope:
    def test_zero_series_passes(self):
        t = np.linspace(0, 5, 30)
        assert check_envelope(t, np.zeros(30), 3.0, 0.0).passed

    def test_slack_policy(self):
        t = np.linspace(0, 5, 30)
        env = 2.0 * np.exp(-t)
        assert check_envelope(t, env * 1.049, 1.0, 2.0).passed
        res = check_envelope(t, env * 1.06, 1.0, 2.0)
        assert not res.passed and res.first_violation_time == 0.0

    def test_absolute_floor(self):
        t = np.linspace(0, 50, 30)
        assert check_envelope(t, np.full(30, 0.9e-8), 1.0, 0.0).passed
        assert not check_envelope(t, np.full(30, 1.1e-8), 1.0, 0.0).passed


class TestOscillation:
    def test_monotone(self):
        t = np.linspace(0, 10, 200)
        rho = 3 - np.exp(-t)
        rep = tv_and_oscillation(t, rho)
        assert rep.sign_changes == 0
        assert rep.tv_rho2 == pytest.approx(abs(rho[-1] ** 2 - rho[0] ** 2), rel=1e-12)

    def test_constant(self):
        rep = tv_and_oscillation(np.linspace(0, 1, 10), np.full(10, 2.0))
        assert rep.sign_changes == 0 and rep.tv_rho2 == 0 and rep.int_abs_rhodot == 0
        assert rep.tail_ratio_rho2 == 0

    def test_damped_sine(self):
        t = np.linspace(0, 20, 4001)
        rho = 2 + np.exp(-0.3 * t) * np.sin(2 * t)
        rep = tv_and_oscillation(t, rho)
        assert rep.sign_changes == 13  # extrema of sin(2t - phase) on [0, 20]
        assert rep.damped
        assert rep.period == pytest.approx(math.pi, rel=1e-2)
        np.testing.assert_allclose(rep.peak_ratios, math.exp(-0.3 * math.pi / 2), rtol=2e-2)

    def test_growing_oscillation_not_damped(self):
        t = np.linspace(0, 10, 2001)
        rep = tv_and_oscillation(t, 5 + 0.1 * np.exp(0.2 * t) * np.cos(3 * t))
        assert not rep.damped and rep.max_peak_ratio > 1

    def test_ignores_rounding_wiggles(self):
        y = np.array([0.0, 1.0, 1.0 - 1e-14, 1.0, 2.0])
        assert turning_points(y, 1e-9) == []


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.0, 10.0), min_size=2, max_size=60))
def test_cumulative_tv_properties(values):
    rho = np.array(values)
    t = np.arange(len(rho), dtype=float)
    rep = tv_and_oscillation(t, rho)
    assert rep.tv_rho2 >= abs(rho[-1] ** 2 - rho[0] ** 2) - 1e-9
    assert rep.int_abs_rhodot >= abs(rho[-1] - rho[0]) - 1e-12
    assert 0.0 <= rep.tail_ratio_rho2 <= 1.0
    assert rep.sign_changes <= len(rho) - 2


class TestConcentration:
    def test_grid_delta(self):
        x = ODD_UNIT.nodes
        n = np.zeros_like(x)
        n[500] = 1.0 / ODD_UNIT.dx
        r = concentration_metrics(x, ODD_UNIT.dx, n, 0.5)
        assert r.var_x == pytest.approx(0.0, abs=1e-25) and r.w1_to_dirac == pytest.approx(0.0, abs=1e-15)

    def test_symmetric_gaussian(self):
        d = TraitDomain(-1.0, 1.0, 801)
        n = gaussian_initial(d, 0.2, 100.0, 1.0)
        r = concentration_metrics(d.nodes, d.dx, n, 0.2)
        assert r.mean_x == pytest.approx(0.2, abs=1e-12)
        assert r.var_x == pytest.approx(1 / 200, rel=1e-6)
        # E|X - c| for a normal with variance 1/200; the kink at c costs O(dx^2)
        assert r.w1_to_dirac == pytest.approx(math.sqrt(2 / math.pi / 200), rel=1e-3)

    def test_extinct(self):
        r = concentration_metrics(np.linspace(0, 1, 5), 0.25, np.zeros(5), 0.5)
        assert not r.defined and math.isnan(r.var_x)


class TestCriticalBeta:
    def test_fig4_model(self):
        m = GeneralModel(1.0, PAPER_R, PAPER_Q)
        assert critical_beta(m, esd_general(m, ODD_UNIT)) == pytest.approx(BETA_STAR, rel=1e-9)

    @pytest.mark.parametrize("c", [0.5, 4.0])
    def test_scales_with_Q(self, c):
        base = GeneralModel(1.0, PAPER_R, PAPER_Q)
        scaled = GeneralModel(1.0, PAPER_R, f"{c!r}*({PAPER_Q})")
        assert critical_beta(scaled, esd_general(scaled, ODD_UNIT)) == pytest.approx(
            c * critical_beta(base, esd_general(base, ODD_UNIT)), rel=1e-9)

    def test_linear_example(self):
        m = GeneralModel(1.0, "S-1-x^2", "2-S-rho")
        d = TraitDomain(-1.0, 1.0, 201)
        assert critical_beta(m, esd_general(m, d)) == pytest.approx(0.25, rel=1e-9)

    def test_extinct_rejected(self):
        m = GeneralModel(1.0, "0.01*S-1", PAPER_Q)
        with pytest.raises(ValueError):
            critical_beta(m, esd_general(m, ODD_UNIT))
