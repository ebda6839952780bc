"""Scalarized tracking-error simulator for annealing schedules.

Models the competition between schedule-induced fixed-point motion and the
solver's restoring contraction with a scalar recurrence

    e_{t+1} = rho_t * (e_t + drift_t),      rho_t = 1 - gamma * eps_{t+1},
    drift_t = (s / eps_t) * delta_t * kappa,

where ``delta_t`` is the cooling step. The quadratic law ``delta = c eps^2``
keeps the induced drift proportional to ``eps`` and the equilibrium error
bounded; exponential cooling injects constant drift against a vanishing
restoring force and must eventually overrun any fixed basin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np

from .control import ExponentialSchedule, GumbelExponentialSchedule, QuadraticSchedule, Schedule
from .errors import InvalidInputError

__all__ = [
    "TrackingParams",
    "TrackingTrace",
    "CriticalEpsilon",
    "simulate_tracking",
    "steady_state_bound",
    "critical_epsilon",
    "write_trace_csv",
    "TRACE_CSV_HEADER",
]

TRACE_CSV_HEADER = "step,epsilon,delta,drift,error,bound,escaped"


@dataclass(frozen=True)
class TrackingParams:
    """Scalar model constants.

    gamma: spectral-gap slope, 1 - rho = gamma * eps.
    sensitivity_const: fixed-point motion scale, ||dP*/deps|| = s / eps.
    kappa: modal-conditioning amplification of injected drift.
    basin_radius: linearization radius R; ``basin_mode`` selects whether the
    usable basin shrinks linearly with eps (the harder regime, default) or
    stays constant.
    """

    gamma: float
    sensitivity_const: float
    kappa: float = 1.0
    basin_radius: float = 1.0
    epsilon_start: float = 1.0
    schedule: Schedule = field(default_factory=lambda: ExponentialSchedule(alpha=0.95))
    basin_mode: str = "linear"
    epsilon_floor: float = 1e-12

    def __post_init__(self):
        if min(self.gamma, self.sensitivity_const, self.basin_radius, self.epsilon_start) <= 0.0:
            raise InvalidInputError("gamma, sensitivity_const, basin_radius, epsilon_start must be positive")
        if self.kappa < 1.0:
            raise InvalidInputError("kappa must be at least 1")
        if self.basin_mode not in ("linear", "constant"):
            raise InvalidInputError("basin_mode must be 'linear' or 'constant'")
        if self.gamma * self.epsilon_start >= 1.0:
            raise InvalidInputError(
                "gamma * epsilon_start must be below 1 (contraction valid at start)"
            )

    def basin(self, epsilon: float) -> float:
        return self.basin_radius * epsilon if self.basin_mode == "linear" else self.basin_radius


@dataclass(frozen=True, eq=False)
class TrackingTrace:
    """Per-step arrays; row t is the state after the t-th transition."""

    step: np.ndarray
    epsilon: np.ndarray
    delta: np.ndarray
    drift: np.ndarray
    error: np.ndarray
    bound: np.ndarray
    escaped: np.ndarray

    @property
    def ever_escaped(self) -> bool:
        return bool(self.escaped.any())

    @property
    def escape_epsilon(self) -> Optional[float]:
        idx = np.flatnonzero(self.escaped)
        return float(self.epsilon[idx[0]]) if idx.size else None


def _schedule_delta(schedule: Schedule, eps: float) -> float:
    if isinstance(schedule, (ExponentialSchedule, GumbelExponentialSchedule)):
        return (1.0 - schedule.alpha) * eps
    if isinstance(schedule, QuadraticSchedule):
        return schedule.c * eps * eps
    raise InvalidInputError(f"unknown schedule {schedule!r}")


def steady_state_bound(params: TrackingParams, epsilon: float, delta: float) -> float:
    """Equilibrium tracking error of a frozen-step recurrence.

    The geometric series of the recurrence sums to a 1/(gamma*eps) resolvent
    factor on the injected drift (s/eps)*delta*kappa, i.e. an eps^-2
    amplification of the step size.
    """
    if not params.gamma * epsilon < 1.0:
        raise InvalidInputError("need gamma * epsilon < 1 for a contraction")
    return (1.0 / (params.gamma * epsilon)) * (params.sensitivity_const / epsilon) * delta * params.kappa


def simulate_tracking(
    params: TrackingParams,
    steps: int,
    *,
    injected_drift: Union[None, float, Callable[[int], float]] = None,
    controller_k_safe: Optional[float] = None,
) -> TrackingTrace:
    """Run the scalar tracking recurrence for ``steps`` transitions.

    With ``injected_drift`` set, the temperature is frozen at
    ``epsilon_start`` and the recurrence becomes e <- rho*e + u (the additive
    constant-forcing form whose limit is u/(1-rho)); u may be a constant or a
    per-step callable. Otherwise the drift comes from the schedule and enters
    pre-multiplied by the contraction, matching the exact one-step error
    propagation. ``controller_k_safe`` applies the linear pause law to the
    schedule-induced drift before each cooling step.
    """
    if steps < 1:
        raise InvalidInputError("steps must be positive")
    eps = params.epsilon_start
    e = 0.0
    out = {k: np.zeros(steps) for k in ("epsilon", "delta", "drift", "error", "bound")}
    escaped = np.zeros(steps, dtype=bool)
    tripped = False
    forced = injected_drift is not None
    for t in range(steps):
        if forced:
            u = injected_drift(t) if callable(injected_drift) else float(injected_drift)
            delta = 0.0
            eps_next = eps
            rho = 1.0 - params.gamma * eps_next
            e = rho * e + u
            drift = u
        else:
            delta = _schedule_delta(params.schedule, eps)
            drift = (params.sensitivity_const / eps) * delta * params.kappa
            if controller_k_safe is not None and drift > controller_k_safe * eps:
                delta = 0.0
                drift = 0.0
            eps_next = max(eps - delta, params.epsilon_floor)
            rho = 1.0 - params.gamma * eps_next
            e = rho * (e + drift)
        tripped = tripped or (e > params.basin(eps_next))
        out["epsilon"][t] = eps_next
        out["delta"][t] = delta
        out["drift"][t] = drift
        out["error"][t] = e
        out["bound"][t] = steady_state_bound(params, eps_next, delta) if delta > 0 else 0.0
        escaped[t] = tripped
        eps = eps_next
    return TrackingTrace(
        step=np.arange(steps),
        epsilon=out["epsilon"],
        delta=out["delta"],
        drift=out["drift"],
        error=out["error"],
        bound=out["bound"],
        escaped=escaped,
    )


@dataclass(frozen=True)
class CriticalEpsilon:
    """Analytic basin-crossing temperature and the simulated escape point.

    Either field is None when the corresponding route reports no collapse
    (the quadratic schedule below its capacity never crosses a constant
    basin).
    """

    analytic: Optional[float]
    simulated: Optional[float]
    escaped: bool


def critical_epsilon(params: TrackingParams, alpha: float, *, max_steps: int = 20_000) -> CriticalEpsilon:
    """Where the equilibrium error of exponential cooling overruns the basin.

    For exponential cooling at rate ``alpha`` the bound is
    s*kappa*(1-alpha)/(gamma*eps); equating it with the basin gives
    sqrt(s*kappa*(1-alpha)/(gamma*R)) in the linear-basin regime and
    s*kappa*(1-alpha)/(gamma*R) for a constant basin. A quadratic-schedule
    parameter set below capacity (s*kappa*c/gamma < R, constant basin) has no
    crossing and reports the no-collapse sentinel. The simulated escape point
    from the actual recurrence is reported alongside.
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError("alpha must lie in (0, 1)")
    s, k, g, R = params.sensitivity_const, params.kappa, params.gamma, params.basin_radius
    if isinstance(params.schedule, QuadraticSchedule):
        c = params.schedule.c
        if params.basin_mode == "constant":
            analytic = None if s * k * c / g < R else params.epsilon_start
        else:
            analytic = s * k * c / (g * R)
    else:
        params = replace(params, schedule=ExponentialSchedule(alpha=alpha))
        if params.basin_mode == "linear":
            analytic = math.sqrt(s * k * (1.0 - alpha) / (g * R))
        else:
            analytic = s * k * (1.0 - alpha) / (g * R)
    trace = simulate_tracking(params, max_steps)
    return CriticalEpsilon(
        analytic=analytic,
        simulated=trace.escape_epsilon,
        escaped=trace.ever_escaped,
    )


def write_trace_csv(fh, trace: TrackingTrace) -> None:
    fh.write(TRACE_CSV_HEADER + "\n")
    for t in range(len(trace.step)):
        fh.write(
            f"{int(trace.step[t])},{float(trace.epsilon[t])!r},{float(trace.delta[t])!r},"
            f"{float(trace.drift[t])!r},{float(trace.error[t])!r},{float(trace.bound[t])!r},"
            f"{int(trace.escaped[t])}\n"
        )
