import itertools
import math

import numpy as np
import pytest

from otanneal import (
    ExponentialSchedule,
    InvalidInputError,
    QuadraticSchedule,
    TrackingParams,
    critical_epsilon,
    simulate_tracking,
    steady_state_bound,
)
from otanneal.tracking import TRACE_CSV_HEADER, write_trace_csv

# 3x3 (gamma, s) grid in the quasi-static regime: s*kappa/gamma < R for the
# quadratic capacity condition, and s*kappa/R large enough that the error
# equilibrates faster than the exponential schedule moves
GRID_GAMMAS = (5.0, 6.0, 7.0)
GRID_SENS = (3.5, 4.2, 4.9)
GRID_KW = dict(kappa=1.0, basin_radius=1.0, epsilon_start=0.12, basin_mode="constant")


def params(**kw):
    base = dict(gamma=1.0, sensitivity_const=1.0, kappa=1.0, basin_radius=1.0,
                epsilon_start=0.5)
    base.update(kw)
    return TrackingParams(**base)


class TestSimulateTracking:
    def test_frozen_epsilon_contracts_geometrically(self):
        p = params(epsilon_start=0.5)
        trace = simulate_tracking(p, 50, injected_drift=0.0)
        assert trace.error[-1] == 0.0
        assert not trace.ever_escaped

    def test_frozen_decay_rate(self):
        # seed a unit error via one injected kick, then watch pure contraction
        p = params(gamma=1.0, epsilon_start=0.5)
        kick = lambda t: 1.0 if t == 0 else 0.0
        trace = simulate_tracking(p, 30, injected_drift=kick)
        rho = 1.0 - 1.0 * 0.5
        np.testing.assert_allclose(trace.error[1:], rho ** np.arange(1, 30), rtol=1e-12)

    def test_constant_forcing_reaches_neumann_limit(self):
        # rho = 1 - gamma*eps = 0.9; limit u/(1-rho) = 0.1
        p = params(gamma=1.0, epsilon_start=0.1)
        trace = simulate_tracking(p, 200, injected_drift=0.01)
        assert abs(trace.error[-1] - 0.1) < 1e-6

    def test_lemma_bound_tightness(self):
        # within 1% of u/(1-rho) after 10/(1-rho) steps, across contractions
        for rho in (0.5, 0.9, 0.99):
            eps = 1.0 - rho
            p = params(gamma=1.0, epsilon_start=eps)
            steps = int(10.0 / (1.0 - rho)) + 1
            u = 0.003
            trace = simulate_tracking(p, steps, injected_drift=u)
            limit = u / (1.0 - rho)
            assert abs(trace.error[-1] - limit) / limit < 0.01

    def test_exponential_escape_golden(self):
        p = params(epsilon_start=0.99)
        trace = simulate_tracking(p, 2000)
        idx = int(np.flatnonzero(trace.escaped)[0])
        assert idx == 33
        assert trace.epsilon[idx] == pytest.approx(0.173076368576559, rel=1e-12)
        assert trace.epsilon[idx] > 0.01  # escapes well before the target
        assert trace.escaped[idx:].all()  # sticky from the first escape on

    def test_rejects_bad_steps(self):
        with pytest.raises(InvalidInputError):
            simulate_tracking(params(), 0)

    def test_invalid_params(self):
        with pytest.raises(InvalidInputError):
            params(gamma=2.5, epsilon_start=0.5)  # gamma*eps >= 1
        with pytest.raises(InvalidInputError):
            params(kappa=0.5)


class TestSteadyStateBound:
    def test_arithmetic(self):
        p = params()
        assert steady_state_bound(p, 0.1, 0.01) == pytest.approx(1.0, abs=1e-12)

    def test_quadratic_step_cancels_epsilon(self):
        p = params(gamma=2.0, sensitivity_const=3.0, kappa=1.5, epsilon_start=0.2)
        values = [steady_state_bound(p, eps, eps * eps) for eps in (0.2, 0.1, 0.01)]
        expected = 3.0 * 1.5 / 2.0
        np.testing.assert_allclose(values, expected, rtol=1e-12)

    def test_exponential_step_doubles_when_halved(self):
        p = params()
        alpha = 0.95
        b1 = steady_state_bound(p, 0.2, (1 - alpha) * 0.2)
        b2 = steady_state_bound(p, 0.1, (1 - alpha) * 0.1)
        assert b2 / b1 == pytest.approx(2.0, rel=1e-12)

    def test_requires_contraction(self):
        with pytest.raises(InvalidInputError):
            steady_state_bound(params(gamma=1.0), 1.5, 0.01)


class TestCriticalEpsilon:
    def test_analytic_linear_basin(self):
        p = params(epsilon_start=0.99)
        crit = critical_epsilon(p, 0.95)
        assert crit.analytic == pytest.approx(math.sqrt(0.05), rel=1e-12)
        # the pre-multiplied error recurrence trails the static crossing by a
        # few cooling steps; the simulated escape sits within five of it
        assert crit.escaped
        assert crit.simulated <= crit.analytic
        assert crit.simulated >= crit.analytic * 0.95**5

    def test_monotone_in_alpha(self):
        p = params(epsilon_start=0.9)
        crits = [critical_epsilon(p, a).analytic for a in (0.9, 0.95, 0.99, 0.999)]
        assert all(a > b for a, b in zip(crits, crits[1:]))
        assert crits[-1] < 0.08  # slower cooling survives longer

    def test_quadratic_below_capacity_is_sentinel(self):
        p = params(
            gamma=2.0,
            sensitivity_const=1.0,
            epsilon_start=0.4,
            schedule=QuadraticSchedule(c=1.0),
            basin_mode="constant",
        )  # s*kappa*c/gamma = 0.5 < R = 1
        crit = critical_epsilon(p, 0.95)
        assert crit.analytic is None
        assert crit.simulated is None
        assert not crit.escaped


class TestSpeedLimitDichotomy:
    @pytest.mark.parametrize("gamma,s", list(itertools.product(GRID_GAMMAS, GRID_SENS)))
    def test_quadratic_never_exponential_always(self, gamma, s):
        assert s * 1.0 / gamma < 1.0  # capacity condition
        quad = TrackingParams(gamma=gamma, sensitivity_const=s,
                              schedule=QuadraticSchedule(c=0.5), **GRID_KW)
        trace_q = simulate_tracking(quad, 10_000)
        assert not trace_q.ever_escaped
        exp = TrackingParams(gamma=gamma, sensitivity_const=s,
                             schedule=ExponentialSchedule(0.95), **GRID_KW)
        trace_e = simulate_tracking(exp, 10_000)
        assert trace_e.ever_escaped
        assert trace_e.escape_epsilon > exp.epsilon_start * 0.95**10_000

    @pytest.mark.parametrize("gamma,s", list(itertools.product(GRID_GAMMAS, GRID_SENS)))
    def test_escape_point_within_factor_two(self, gamma, s):
        exp = TrackingParams(gamma=gamma, sensitivity_const=s,
                             schedule=ExponentialSchedule(0.95), **GRID_KW)
        crit = critical_epsilon(exp, 0.95)
        assert crit.escaped
        ratio = crit.simulated / crit.analytic
        assert 0.5 <= ratio <= 2.0

    @pytest.mark.parametrize("gamma,s", list(itertools.product(GRID_GAMMAS, GRID_SENS)))
    def test_controller_closes_the_loop(self, gamma, s):
        # the pause law with k_safe = gamma*R/kappa holds the temperature at
        # the critical point and prevents every uncontrolled escape
        exp = TrackingParams(gamma=gamma, sensitivity_const=s,
                             schedule=ExponentialSchedule(0.95), **GRID_KW)
        assert simulate_tracking(exp, 10_000).ever_escaped
        k_safe = gamma * exp.basin_radius / exp.kappa
        controlled = simulate_tracking(exp, 10_000, controller_k_safe=k_safe)
        assert not controlled.ever_escaped

    def test_linear_basin_defeats_linear_pause_law(self):
        # with a basin that shrinks like R*eps the admissible drift is
        # quadratic in eps, so the linear pause law brakes too late; only the
        # fixed-basin regime above is rescued by k_safe = gamma*R/kappa
        p = params(epsilon_start=0.99)
        assert simulate_tracking(p, 5_000).ever_escaped
        controlled = simulate_tracking(p, 5_000, controller_k_safe=1.0)
        assert controlled.ever_escaped
        # the controller still freezes the temperature once the law trips
        assert controlled.epsilon[-1] == controlled.epsilon[-100]


class TestTraceCsv:
    def test_header_and_rows(self, tmp_path):
        trace = simulate_tracking(params(), 5)
        path = tmp_path / "trace.csv"
        with open(path, "w") as fh:
            write_trace_csv(fh, trace)
        lines = path.read_text().splitlines()
        assert lines[0] == TRACE_CSV_HEADER
        assert lines[0] == "step,epsilon,delta,drift,error,bound,escaped"
        assert len(lines) == 6
        assert lines[1].startswith("0,")
