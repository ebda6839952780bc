"""Log-domain Sinkhorn solver for entropy-regularized optimal transport.

All balancing arithmetic stays in the log domain (potentials f, g in cost
units); the plan ``exp((f_i + g_j - C_ij) / eps)`` is only materialized to
measure marginal residuals and to hand results back. Max-subtracted
log-sum-exp keeps the updates finite down to very small temperatures.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from .errors import InvalidInputError, NumericalFailureError

__all__ = [
    "CostMatrix",
    "SolveConfig",
    "TransportSolution",
    "log_kernel",
    "sinkhorn_solve",
    "plan_entropy",
    "marginal_residual",
    "round_to_assignment",
    "load_cost_csv",
    "save_cost_csv",
    "load_cost_json",
    "save_cost_json",
]

MARGINAL_SUM_TOL = 1e-12


def _as_probability_vector(v, n: int, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (n,):
        raise InvalidInputError(f"{name} must have shape ({n},), got {v.shape}")
    if not np.all(np.isfinite(v)):
        bad = int(np.flatnonzero(~np.isfinite(v))[0])
        raise InvalidInputError(f"{name}[{bad}] is not finite")
    if np.any(v <= 0.0):
        bad = int(np.flatnonzero(v <= 0.0)[0])
        raise InvalidInputError(f"{name}[{bad}] must be strictly positive")
    if abs(float(v.sum()) - 1.0) > MARGINAL_SUM_TOL:
        raise InvalidInputError(f"{name} must sum to 1 within {MARGINAL_SUM_TOL}")
    return v


@dataclass(frozen=True, eq=False)
class CostMatrix:
    """A dense square cost matrix together with its target marginals."""

    cost: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray

    def __post_init__(self):
        cost = np.asarray(self.cost, dtype=float)
        if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
            raise InvalidInputError(f"cost must be square, got shape {cost.shape}")
        n = cost.shape[0]
        if n < 2:
            raise InvalidInputError("cost matrix must be at least 2x2")
        if not np.all(np.isfinite(cost)):
            i, j = np.argwhere(~np.isfinite(cost))[0]
            raise InvalidInputError(f"cost[{i},{j}] is not finite")
        object.__setattr__(self, "cost", cost)
        object.__setattr__(
            self, "row_marginal", _as_probability_vector(self.row_marginal, n, "row_marginal")
        )
        object.__setattr__(
            self, "col_marginal", _as_probability_vector(self.col_marginal, n, "col_marginal")
        )

    @property
    def n(self) -> int:
        return self.cost.shape[0]

    @classmethod
    def uniform(cls, cost) -> "CostMatrix":
        """Wrap a raw cost array with uniform marginals."""
        cost = np.asarray(cost, dtype=float)
        n = cost.shape[0]
        u = np.full(n, 1.0 / n)
        return cls(cost, u, u.copy())


@dataclass(frozen=True)
class SolveConfig:
    """Convergence policy for :func:`sinkhorn_solve`.

    ``tolerance`` is the l1 marginal residual target. ``epsilon_floor`` is the
    smallest admissible temperature: below it, log-domain potentials on O(1)
    costs stop being representable in double precision.
    """

    tolerance: float = 1e-9
    max_iterations: int = 10_000
    epsilon_floor: float = 1e-4

    def __post_init__(self):
        if not self.tolerance > 0.0:
            raise InvalidInputError("tolerance must be positive")
        if self.max_iterations < 1:
            raise InvalidInputError("max_iterations must be a positive integer")
        if not self.epsilon_floor > 0.0:
            raise InvalidInputError("epsilon_floor must be positive")


@dataclass(frozen=True, eq=False)
class TransportSolution:
    """A (possibly partial) Sinkhorn solve result.

    ``converged`` is False when the iteration budget ran out; the fields then
    hold the last iterate so callers can decide what to do with it.
    Potentials are gauge fixed so that ``sum(log_potentials_f) == 0``.
    """

    plan: np.ndarray
    log_potentials_f: np.ndarray
    log_potentials_g: np.ndarray
    epsilon: float
    iterations: int
    marginal_residual: float
    converged: bool = True

    @property
    def n(self) -> int:
        return self.plan.shape[0]


def log_kernel(C: CostMatrix, epsilon: float, *, epsilon_floor: float = 1e-4) -> np.ndarray:
    """Entrywise ``-C_ij / epsilon``, the log of the Gibbs kernel.

    The exponential itself is never formed; every consumer works with these
    log values directly.
    """
    if not np.isfinite(epsilon) or epsilon < epsilon_floor:
        raise InvalidInputError(
            f"epsilon={epsilon!r} is below the admissible floor {epsilon_floor!r}"
        )
    return -C.cost / epsilon


def _plan_from_potentials(C: CostMatrix, f: np.ndarray, g: np.ndarray, epsilon: float) -> np.ndarray:
    return np.exp((f[:, None] + g[None, :] - C.cost) / epsilon)


def _residual(plan: np.ndarray, C: CostMatrix) -> float:
    return float(
        np.abs(plan.sum(axis=1) - C.row_marginal).sum()
        + np.abs(plan.sum(axis=0) - C.col_marginal).sum()
    )


def sinkhorn_solve(
    C: CostMatrix,
    epsilon: float,
    cfg: SolveConfig = SolveConfig(),
    warm_start: TransportSolution | None = None,
) -> TransportSolution:
    """Alternating log-domain row/column balancing at fixed temperature.

    Stops once the l1 marginal residual drops to ``cfg.tolerance`` or the
    iteration budget is spent; in the latter case the last iterate is
    returned with ``converged=False`` rather than raised, so annealing loops
    can keep tracking. NaN in the potentials is a hard error.
    """
    if not np.isfinite(epsilon) or epsilon < cfg.epsilon_floor:
        raise InvalidInputError(
            f"epsilon={epsilon!r} is below the admissible floor {cfg.epsilon_floor!r}"
        )
    n = C.n
    if warm_start is not None:
        if warm_start.n != n:
            raise InvalidInputError(
                f"warm start has size {warm_start.n}, cost matrix has size {n}"
            )
        f = warm_start.log_potentials_f.copy()
        g = warm_start.log_potentials_g.copy()
    else:
        f = np.zeros(n)
        g = np.zeros(n)

    log_r = np.log(C.row_marginal)
    log_c = np.log(C.col_marginal)
    cost = C.cost

    plan = _plan_from_potentials(C, f, g, epsilon)
    res = _residual(plan, C)
    iterations = 0
    converged = res <= cfg.tolerance
    while not converged and iterations < cfg.max_iterations:
        f = epsilon * log_r - epsilon * logsumexp((g[None, :] - cost) / epsilon, axis=1)
        g = epsilon * log_c - epsilon * logsumexp((f[:, None] - cost) / epsilon, axis=0)
        iterations += 1
        if np.isnan(f).any() or np.isnan(g).any():
            raise NumericalFailureError(
                f"NaN in potentials after {iterations} iterations at epsilon={epsilon!r}"
            )
        plan = _plan_from_potentials(C, f, g, epsilon)
        res = _residual(plan, C)
        converged = res <= cfg.tolerance

    shift = float(f.mean())
    f = f - shift
    g = g + shift
    plan = _plan_from_potentials(C, f, g, epsilon)
    return TransportSolution(
        plan=plan,
        log_potentials_f=f,
        log_potentials_g=g,
        epsilon=float(epsilon),
        iterations=iterations,
        marginal_residual=res,
        converged=bool(converged),
    )


def plan_entropy(sol) -> float:
    """Shannon entropy of the plan, with the convention 0*log(0) = 0."""
    plan = sol.plan if isinstance(sol, TransportSolution) else np.asarray(sol, dtype=float)
    positive = plan[plan > 0.0]
    return float(-(positive * np.log(positive)).sum())


def marginal_residual(plan: np.ndarray, C: CostMatrix) -> float:
    """l1 distance of the plan's marginals to the targets."""
    plan = np.asarray(plan, dtype=float)
    if plan.shape != C.cost.shape:
        raise InvalidInputError(f"plan shape {plan.shape} does not match cost shape {C.cost.shape}")
    return _residual(plan, C)


def round_to_assignment(sol) -> tuple[np.ndarray, bool]:
    """Round a plan to a hard assignment (the plan read as a profit matrix).

    For n <= 10 the exact maximum-weight assignment is computed; for larger
    plans a greedy row sweep picks the best still-free column, breaking ties
    toward the lowest column index. The flag reports which path ran.
    """
    plan = sol.plan if isinstance(sol, TransportSolution) else np.asarray(sol, dtype=float)
    n = plan.shape[0]
    if n <= 10:
        _, cols = linear_sum_assignment(-plan)
        return cols.astype(int), True
    perm = np.full(n, -1, dtype=int)
    used = np.zeros(n, dtype=bool)
    for i in range(n):
        row = np.where(used, -np.inf, plan[i])
        j = int(np.argmax(row))  # argmax returns the lowest index on ties
        perm[i] = j
        used[j] = True
    return perm, False


# ---------------------------------------------------------------------------
# Cost-instance serialization.
#
# CSV: one line holding n, then n rows of n comma-separated decimals
# (marginals default to uniform on load).
# JSON: {"n": ..., "cost": [[...]], "row_marginal": [...], "col_marginal": [...]}.
# ---------------------------------------------------------------------------


def save_cost_csv(C: CostMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"{C.n}\n")
        writer = csv.writer(fh)
        for row in C.cost:
            writer.writerow([repr(float(x)) for x in row])


def load_cost_csv(path, row_marginal=None, col_marginal=None) -> CostMatrix:
    with open(path, "r", newline="") as fh:
        header = fh.readline().strip()
        try:
            n = int(header)
        except ValueError as exc:
            raise InvalidInputError(f"bad size header {header!r} in {path}") from exc
        rows = [row for row in csv.reader(fh) if row]
    if len(rows) != n:
        raise InvalidInputError(f"expected {n} rows in {path}, found {len(rows)}")
    cost = np.array([[float(x) for x in row] for row in rows])
    if cost.shape != (n, n):
        raise InvalidInputError(f"expected {n}x{n} entries in {path}, got {cost.shape}")
    u = np.full(n, 1.0 / n)
    return CostMatrix(
        cost,
        u if row_marginal is None else row_marginal,
        u.copy() if col_marginal is None else col_marginal,
    )


def cost_to_json_dict(C: CostMatrix) -> dict:
    return {
        "n": C.n,
        "cost": C.cost.tolist(),
        "row_marginal": C.row_marginal.tolist(),
        "col_marginal": C.col_marginal.tolist(),
    }


def cost_from_json_dict(doc: dict) -> CostMatrix:
    try:
        n = int(doc["n"])
        cost = np.asarray(doc["cost"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"malformed cost document: {exc}") from exc
    if cost.shape != (n, n):
        raise InvalidInputError(f"cost document claims n={n} but has shape {cost.shape}")
    u = np.full(n, 1.0 / n)
    row = np.asarray(doc.get("row_marginal", u), dtype=float)
    col = np.asarray(doc.get("col_marginal", u), dtype=float)
    return CostMatrix(cost, row, col)


def save_cost_json(C: CostMatrix, path) -> None:
    with open(path, "w") as fh:
        json.dump(cost_to_json_dict(C), fh)
        fh.write("\n")


def load_cost_json(path) -> CostMatrix:
    with open(path) as fh:
        return cost_from_json_dict(json.load(fh))
