"""Annealing schedules and the drift-gated stability controller.

The controller enforces a linear admissible-drift law: cooling proceeds only
while the Frobenius shift between consecutive converged plans stays below
``k_safe * epsilon``; otherwise the temperature is held (a pause) until the
shift subsides. ``k_safe`` is calibrated offline by deliberately crashing
aggressive schedules on proxy instances and recording the drift-to-
temperature ratio at the moment the assignment departs for good.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import CalibrationError, InvalidInputError
from .transport import (
    CostMatrix,
    SolveConfig,
    TransportSolution,
    round_to_assignment,
    sinkhorn_solve,
)

__all__ = [
    "Decision",
    "ExponentialSchedule",
    "QuadraticSchedule",
    "GumbelExponentialSchedule",
    "Schedule",
    "ControllerConfig",
    "AnnealState",
    "AnnealRun",
    "CostProcess",
    "CalibrationResult",
    "schedule_step",
    "controller_decide",
    "measure_drift",
    "perturb_cost",
    "run_annealing",
    "calibrate_k_safe",
    "schedule_to_json_dict",
    "schedule_from_json_dict",
]


class Decision(enum.Enum):
    COOL = "cool"
    PAUSE = "pause"


@dataclass(frozen=True)
class ExponentialSchedule:
    alpha: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise InvalidInputError("alpha must lie in (0, 1)")


@dataclass(frozen=True)
class QuadraticSchedule:
    c: float

    def __post_init__(self):
        if not self.c > 0.0:
            raise InvalidInputError("c must be positive")


@dataclass(frozen=True)
class GumbelExponentialSchedule:
    """Exponential cooling with Gumbel noise injected into the cost (not the
    temperature); the schedule itself matches ``ExponentialSchedule``."""

    alpha: float
    noise_scale: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise InvalidInputError("alpha must lie in (0, 1)")
        if self.noise_scale < 0.0:
            raise InvalidInputError("noise_scale must be nonnegative")


Schedule = Union[ExponentialSchedule, QuadraticSchedule, GumbelExponentialSchedule]


def schedule_to_json_dict(schedule: Schedule) -> dict:
    if isinstance(schedule, ExponentialSchedule):
        return {"type": "exponential", "alpha": schedule.alpha}
    if isinstance(schedule, QuadraticSchedule):
        return {"type": "quadratic", "c": schedule.c}
    if isinstance(schedule, GumbelExponentialSchedule):
        return {
            "type": "gumbel_exponential",
            "alpha": schedule.alpha,
            "noise_scale": schedule.noise_scale,
        }
    raise InvalidInputError(f"unknown schedule {schedule!r}")


def schedule_from_json_dict(doc: dict) -> Schedule:
    kind = doc.get("type")
    if kind == "exponential":
        return ExponentialSchedule(alpha=float(doc["alpha"]))
    if kind == "quadratic":
        return QuadraticSchedule(c=float(doc["c"]))
    if kind == "gumbel_exponential":
        return GumbelExponentialSchedule(
            alpha=float(doc["alpha"]), noise_scale=float(doc["noise_scale"])
        )
    raise InvalidInputError(f"unknown schedule type {kind!r}")


@dataclass(frozen=True)
class ControllerConfig:
    """Annealing run configuration.

    ``k_safe`` may be None, which disables pausing entirely: the run then
    follows the raw schedule (the uncontrolled baselines).
    """

    k_safe: Optional[float]
    schedule: Schedule
    epsilon_start: float
    epsilon_target: float
    max_steps: int
    max_consecutive_pauses: int = 50

    def __post_init__(self):
        if self.k_safe is not None and not self.k_safe > 0.0:
            raise InvalidInputError("k_safe must be positive (or None to disable)")
        if not 0.0 < self.epsilon_target < self.epsilon_start:
            raise InvalidInputError("need 0 < epsilon_target < epsilon_start")
        if self.max_steps < 1 or self.max_consecutive_pauses < 1:
            raise InvalidInputError("step limits must be positive integers")

    def to_json_dict(self) -> dict:
        return {
            "k_safe": self.k_safe,
            "schedule": schedule_to_json_dict(self.schedule),
            "epsilon_start": self.epsilon_start,
            "epsilon_target": self.epsilon_target,
            "max_steps": self.max_steps,
            "max_consecutive_pauses": self.max_consecutive_pauses,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ControllerConfig":
        return cls(
            k_safe=None if doc.get("k_safe") is None else float(doc["k_safe"]),
            schedule=schedule_from_json_dict(doc["schedule"]),
            epsilon_start=float(doc["epsilon_start"]),
            epsilon_target=float(doc["epsilon_target"]),
            max_steps=int(doc["max_steps"]),
            max_consecutive_pauses=int(doc.get("max_consecutive_pauses", 50)),
        )


@dataclass(frozen=True)
class AnnealState:
    step: int
    epsilon: float
    drift: float
    decision: Decision
    pause_count: int


@dataclass(frozen=True, eq=False)
class AnnealRun:
    """Full trajectory of one annealing run.

    ``stalled`` flags a run aborted because the controller paused more than
    ``max_consecutive_pauses`` times in a row; the history up to that point is
    retained either way.
    """

    states: tuple
    solutions: tuple
    stalled: bool

    @property
    def final_solution(self) -> TransportSolution:
        return self.solutions[-1]

    @property
    def epsilons(self) -> np.ndarray:
        return np.array([s.epsilon for s in self.states])


@dataclass(frozen=True)
class CostProcess:
    """A deterministic step-indexed cost stream.

    ``fn`` must be pure with respect to the step index. The optional
    reference assignment is the ground truth used by calibration and
    experiment scoring.
    """

    fn: Callable[[int], CostMatrix]
    reference_assignment: Optional[np.ndarray] = None
    name: str = ""

    def __call__(self, step: int) -> CostMatrix:
        return self.fn(step)

    @classmethod
    def static(cls, C: CostMatrix, reference=None, name: str = "static") -> "CostProcess":
        return cls(fn=lambda step: C, reference_assignment=reference, name=name)


def schedule_step(state: AnnealState, cfg: ControllerConfig, *, epsilon_floor: float = 1e-4) -> float:
    """Next temperature proposed by the configured schedule on a cool step."""
    eps = state.epsilon
    sched = cfg.schedule
    if isinstance(sched, (ExponentialSchedule, GumbelExponentialSchedule)):
        nxt = sched.alpha * eps
    elif isinstance(sched, QuadraticSchedule):
        nxt = eps - sched.c * eps * eps
    else:
        raise InvalidInputError(f"unknown schedule {sched!r}")
    return max(nxt, epsilon_floor)


def controller_decide(drift: float, epsilon: float, k_safe: Optional[float]) -> Decision:
    """Cool while the drift obeys the linear law ``drift <= k_safe * epsilon``.

    Equality cools (the stability condition is non-strict). ``k_safe=None``
    always cools.
    """
    if k_safe is None:
        return Decision.COOL
    return Decision.COOL if drift <= k_safe * epsilon else Decision.PAUSE


def measure_drift(prev_plan: np.ndarray, curr_plan: np.ndarray) -> float:
    """Frobenius distance between consecutive plans."""
    prev_plan = np.asarray(prev_plan, dtype=float)
    curr_plan = np.asarray(curr_plan, dtype=float)
    if prev_plan.shape != curr_plan.shape:
        raise InvalidInputError(
            f"plan shapes differ: {prev_plan.shape} vs {curr_plan.shape}"
        )
    return float(np.linalg.norm(curr_plan - prev_plan))


def perturb_cost(C: CostMatrix, noise_scale: float, rng_seed: int) -> CostMatrix:
    """Add i.i.d. Gumbel(0, noise_scale) noise to every cost entry."""
    if noise_scale < 0.0:
        raise InvalidInputError("noise_scale must be nonnegative")
    if noise_scale == 0.0:
        return CostMatrix(C.cost.copy(), C.row_marginal, C.col_marginal)
    rng = np.random.default_rng(rng_seed)
    noise = rng.gumbel(loc=0.0, scale=noise_scale, size=C.cost.shape)
    return CostMatrix(C.cost + noise, C.row_marginal, C.col_marginal)


def _gumbel_step_seed(seed: int, step: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), 7919, int(step)])


def run_annealing(
    process: CostProcess,
    cfg: ControllerConfig,
    solve_cfg: SolveConfig,
    *,
    seed: int = 0,
) -> AnnealRun:
    """Anneal a (possibly drifting) cost process under the configured policy.

    Each step solves warm-started at the current temperature, measures the
    plan shift against the previous step, and either cools per the schedule
    or pauses (holds epsilon bit-exactly). Stops on reaching the target
    temperature, exhausting ``max_steps``, or pausing too many times in a row
    (a stalled run, flagged rather than raised). Non-converged solves are
    carried forward: the controller tracks whatever the solver can produce
    within its budget.
    """
    if cfg.epsilon_target < solve_cfg.epsilon_floor:
        raise InvalidInputError(
            "epsilon_target must not be below the solver's epsilon_floor"
        )
    eps = cfg.epsilon_start
    prev_sol: TransportSolution | None = None
    states: list[AnnealState] = []
    solutions: list[TransportSolution] = []
    pause_streak = 0
    pause_total = 0
    stalled = False
    gumbel = isinstance(cfg.schedule, GumbelExponentialSchedule)

    for step in range(cfg.max_steps):
        C_t = process(step)
        if gumbel and cfg.schedule.noise_scale > 0.0:
            rng = np.random.default_rng(_gumbel_step_seed(seed, step))
            noise = rng.gumbel(loc=0.0, scale=cfg.schedule.noise_scale, size=C_t.cost.shape)
            C_t = CostMatrix(C_t.cost + noise, C_t.row_marginal, C_t.col_marginal)
        sol = sinkhorn_solve(C_t, eps, solve_cfg, warm_start=prev_sol)
        drift = 0.0 if prev_sol is None else measure_drift(prev_sol.plan, sol.plan)
        decision = controller_decide(drift, eps, cfg.k_safe)
        if decision is Decision.PAUSE:
            pause_streak += 1
            pause_total += 1
        else:
            pause_streak = 0
        states.append(
            AnnealState(step=step, epsilon=eps, drift=drift, decision=decision,
                        pause_count=pause_total)
        )
        solutions.append(sol)
        prev_sol = sol
        if decision is Decision.COOL and eps <= cfg.epsilon_target:
            break
        if pause_streak > cfg.max_consecutive_pauses:
            stalled = True
            break
        if decision is Decision.COOL:
            eps = schedule_step(states[-1], cfg, epsilon_floor=solve_cfg.epsilon_floor)
        # on pause the temperature is carried over unchanged, bit for bit
    return AnnealRun(states=tuple(states), solutions=tuple(solutions), stalled=stalled)


@dataclass(frozen=True)
class CalibrationTrial:
    name: str
    collapsed: bool
    step: int
    epsilon: float
    drift: float
    ratio: float


@dataclass(frozen=True)
class CalibrationResult:
    k_safe_estimate: float
    collapse_epsilon: float
    collapse_drift: float
    safety_factor: float
    trials: tuple


def _first_sustained_departure(correct: Sequence[bool], lookahead: int) -> Optional[int]:
    """First correct-to-wrong transition that never reverts within the
    lookahead window (truncated at the end of the run).

    A trajectory that never held the reference cannot depart from it, so
    wrong-from-the-start runs report no departure.
    """
    m = len(correct)
    for t in range(1, m):
        if correct[t] or not correct[t - 1]:
            continue
        window = correct[t : min(t + lookahead + 1, m)]
        if not any(window):
            return t
    return None


def calibrate_k_safe(
    proxy_instances: Sequence[CostProcess],
    aggressive_alpha: float,
    solve_cfg: SolveConfig,
    *,
    epsilon_start: float = 1.0,
    epsilon_target: float = 0.01,
    max_steps: int = 200,
    safety_factor: float = 0.8,
    lookahead: int = 5,
    seed: int = 0,
) -> CalibrationResult:
    """Estimate the safety slope by crashing an aggressive schedule.

    Runs uncontrolled exponential cooling on each proxy, detects the step at
    which the rounded assignment departs from the proxy's reference and stays
    away through the lookahead window, and keeps the drift-to-temperature
    ratio observed there. The estimate is ``safety_factor`` times the
    smallest ratio across proxies, so the controller brakes strictly before
    the earliest observed failure mode.
    """
    if len(proxy_instances) < 3:
        raise InvalidInputError("calibration needs at least 3 proxy instances")
    if not 0.0 < aggressive_alpha < 1.0:
        raise InvalidInputError("aggressive_alpha must lie in (0, 1)")
    cfg = ControllerConfig(
        k_safe=None,
        schedule=ExponentialSchedule(alpha=aggressive_alpha),
        epsilon_start=epsilon_start,
        epsilon_target=epsilon_target,
        max_steps=max_steps,
    )
    trials = []
    for proxy in proxy_instances:
        if proxy.reference_assignment is None:
            raise InvalidInputError(
                f"proxy {proxy.name!r} lacks a reference assignment"
            )
        run = run_annealing(proxy, cfg, solve_cfg, seed=seed)
        reference = np.asarray(proxy.reference_assignment)
        correct = [
            bool(np.array_equal(round_to_assignment(sol)[0], reference))
            for sol in run.solutions
        ]
        t = _first_sustained_departure(correct, lookahead)
        if t is None:
            trials.append(CalibrationTrial(proxy.name, False, -1, 0.0, 0.0, 0.0))
            continue
        state = run.states[t]
        ratio = state.drift / state.epsilon
        trials.append(
            CalibrationTrial(proxy.name, True, t, state.epsilon, state.drift, ratio)
        )
    collapsed = [t for t in trials if t.collapsed]
    if not collapsed:
        raise CalibrationError(
            "no proxy collapsed under the aggressive schedule; "
            "calibration is inconclusive"
        )
    binding = min(collapsed, key=lambda t: t.ratio)
    return CalibrationResult(
        k_safe_estimate=safety_factor * binding.ratio,
        collapse_epsilon=binding.epsilon,
        collapse_drift=binding.drift,
        safety_factor=safety_factor,
        trials=tuple(trials),
    )
