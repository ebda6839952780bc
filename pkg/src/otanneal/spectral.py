"""Spectral and sensitivity diagnostics of the Sinkhorn fixed point.

The one-round balancing map is differentiated in gauge-fixed log-potential
coordinates (dimension 2n-1); sensitivities of the optimal plan follow from
the implicit-function theorem applied to the marginal constraints, whose
linearization is the symmetric block operator

    A = [[diag(r), P], [P^T, diag(c)]].

Everything here is dense linear algebra: the non-normal Jacobian goes through
a general eigensolver, smallest singular values through full SVD.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import (
    ConvergenceError,
    InvalidInputError,
    JacobianMismatchError,
    NoSeparationError,
    SingularOperatorError,
)
from .transport import CostMatrix, SolveConfig, TransportSolution, sinkhorn_solve

__all__ = [
    "ActiveSupport",
    "BlockOperator",
    "SpectralReport",
    "DualityCheck",
    "ConstantRow",
    "detect_active_support",
    "build_block_operator",
    "sinkhorn_jacobian",
    "jacobian_spectrum_fields",
    "epsilon_sensitivity",
    "cost_direction_response",
    "spectral_report",
    "duality_check",
    "pseudospectrum_grid",
    "write_pseudospectrum_csv",
    "estimate_constants",
    "write_constants_csv",
    "CONSTANTS_CSV_HEADER",
]

MODAL_CONDITION_CAP = 1e12
SINGULAR_FLOOR = 1e-12
JACOBIAN_CHECK_TOL = 1e-4


# ---------------------------------------------------------------------------
# Active support and the block operator
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ActiveSupport:
    """Index pairs carrying at least ``eta`` plan mass, plus the mass gap."""

    indices: frozenset
    eta: float
    tau: float
    active_rows: np.ndarray
    active_cols: np.ndarray

    def mask(self, n: int) -> np.ndarray:
        m = np.zeros((n, n), dtype=bool)
        for i, j in self.indices:
            m[i, j] = True
        return m


def detect_active_support(sol: TransportSolution, eta: float) -> ActiveSupport:
    """Threshold the plan at ``eta`` and verify the on/off masses separate.

    Classification fails (``NoSeparationError``) when the largest excluded
    entry is within a factor two of ``eta``: the plan is then in a support
    bifurcation regime and no stable active set exists at this threshold.
    """
    if not eta > 0.0:
        raise InvalidInputError("eta must be positive")
    plan = sol.plan
    mask = plan >= eta
    if not mask.any():
        raise NoSeparationError(
            f"no plan entry reaches eta={eta!r} (max mass {plan.max()!r})"
        )
    off = plan[~mask]
    tau = float(off.max()) if off.size else 0.0
    if eta <= 2.0 * tau:
        raise NoSeparationError(
            f"support band is populated: eta={eta!r} but off-support mass reaches {tau!r}"
        )
    idx = frozenset((int(i), int(j)) for i, j in np.argwhere(mask))
    return ActiveSupport(
        indices=idx,
        eta=float(eta),
        tau=tau,
        active_rows=np.unique(np.argwhere(mask)[:, 0]),
        active_cols=np.unique(np.argwhere(mask)[:, 1]),
    )


@dataclass(frozen=True, eq=False)
class BlockOperator:
    """The symmetric marginal-constraint operator and its reduced restriction."""

    matrix: np.ndarray
    reduced: np.ndarray
    min_eigenvalue: float


def _zero_sum_basis(p: int) -> np.ndarray:
    """Orthonormal basis (p x (p-1)) of the zero-sum subspace of R^p."""
    w = np.full(p, 1.0 / math.sqrt(p))
    e1 = np.zeros(p)
    e1[0] = 1.0
    v = w - e1
    H = np.eye(p) - 2.0 * np.outer(v, v) / (v @ v)
    return H[:, 1:]


def assemble_block_operator(plan: np.ndarray) -> np.ndarray:
    r = plan.sum(axis=1)
    c = plan.sum(axis=0)
    return np.block([[np.diag(r), plan], [plan.T, np.diag(c)]])


def build_block_operator(sol: TransportSolution, support: ActiveSupport) -> BlockOperator:
    """Assemble A, restrict it to the active rows/columns, and certify it.

    The restriction lives on the doubly gauge-fixed subspace (active row
    potentials summing to zero, likewise for columns), where it must be
    positive definite for the sensitivity systems to be well posed.
    """
    A = assemble_block_operator(sol.plan)
    n = sol.n
    rows = support.active_rows
    cols = support.active_cols
    sel = np.concatenate([rows, n + cols])
    A_S = A[np.ix_(sel, sel)]
    p, q = len(rows), len(cols)
    basis = np.zeros((p + q, (p - 1) + (q - 1)))
    basis[:p, : p - 1] = _zero_sum_basis(p)
    basis[p:, p - 1 :] = _zero_sum_basis(q)
    reduced = basis.T @ A_S @ basis
    min_eig = float(np.linalg.eigvalsh(reduced)[0])
    if min_eig <= SINGULAR_FLOOR:
        raise SingularOperatorError(
            f"reduced operator has min eigenvalue {min_eig!r} (<= {SINGULAR_FLOOR})"
        )
    return BlockOperator(matrix=A, reduced=reduced, min_eigenvalue=min_eig)


def _gauge_projected_min_eigenvalue(plan: np.ndarray) -> float:
    """Smallest eigenvalue of A on the global doubly zero-sum subspace."""
    n = plan.shape[0]
    A = assemble_block_operator(plan)
    basis = np.zeros((2 * n, 2 * (n - 1)))
    basis[:n, : n - 1] = _zero_sum_basis(n)
    basis[n:, n - 1 :] = _zero_sum_basis(n)
    return float(np.linalg.eigvalsh(basis.T @ A @ basis)[0])


# ---------------------------------------------------------------------------
# Fixed-point Jacobian in gauge-fixed potential coordinates
# ---------------------------------------------------------------------------


def _gauge_basis(n: int) -> np.ndarray:
    """Orthonormal basis (2n x (2n-1)) of the complement of the gauge ray.

    The gauge ray is (1, ..., 1, -1, ..., -1)/sqrt(2n): shifting f up and g
    down by a common constant leaves the plan unchanged.
    """
    w = np.concatenate([np.ones(n), -np.ones(n)]) / math.sqrt(2 * n)
    e1 = np.zeros(2 * n)
    e1[0] = 1.0
    v = w - e1
    H = np.eye(2 * n) - 2.0 * np.outer(v, v) / (v @ v)
    return H[:, 1:]


def _conditionals(plan: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-conditional R (rows sum to 1) and column-conditional Q."""
    r = plan.sum(axis=1)
    c = plan.sum(axis=0)
    return plan / r[:, None], plan / c[None, :]


def _jacobian_full(plan: np.ndarray) -> np.ndarray:
    """Derivative of one row-then-column balancing round on (f, g)."""
    n = plan.shape[0]
    R, Q = _conditionals(plan)
    J = np.zeros((2 * n, 2 * n))
    J[:n, n:] = -R           # updated f depends only on incoming g
    J[n:, n:] = Q.T @ R      # updated g chains through the fresh f
    return J


def _balancing_round(C: CostMatrix, f: np.ndarray, g: np.ndarray, epsilon: float):
    log_r = np.log(C.row_marginal)
    log_c = np.log(C.col_marginal)
    f_new = epsilon * log_r - epsilon * logsumexp((g[None, :] - C.cost) / epsilon, axis=1)
    g_new = epsilon * log_c - epsilon * logsumexp((f_new[:, None] - C.cost) / epsilon, axis=0)
    return f_new, g_new


def sinkhorn_jacobian(
    sol: TransportSolution,
    C: CostMatrix | None = None,
    *,
    cross_check: bool = True,
) -> np.ndarray:
    """Jacobian of one full balancing round at the fixed point.

    Returned on the gauge-fixed (2n-1)-dimensional potential space. Assembled
    analytically from the row/column conditional matrices of the plan; when a
    cost matrix is supplied the result is cross-checked against central finite
    differences of the actual iteration map and a relative mismatch above
    1e-4 raises ``JacobianMismatchError``.
    """
    if not sol.converged:
        raise ConvergenceError("Jacobian requires a converged solution")
    n = sol.n
    U = _gauge_basis(n)
    J = U.T @ _jacobian_full(sol.plan) @ U
    if cross_check and C is not None:
        f0, g0 = sol.log_potentials_f, sol.log_potentials_g
        h = sol.epsilon * 1e-5
        J_fd = np.empty_like(J)
        for k in range(2 * n - 1):
            d = U[:, k]
            fp, gp = _balancing_round(C, f0 + h * d[:n], g0 + h * d[n:], sol.epsilon)
            fm, gm = _balancing_round(C, f0 - h * d[:n], g0 - h * d[n:], sol.epsilon)
            J_fd[:, k] = U.T @ (np.concatenate([fp - fm, gp - gm]) / (2.0 * h))
        scale = max(1.0, float(np.linalg.norm(J_fd)))
        err = float(np.linalg.norm(J - J_fd)) / scale
        if err > JACOBIAN_CHECK_TOL:
            raise JacobianMismatchError(
                f"analytic vs finite-difference Jacobian mismatch: {err:.3e}"
            )
    return J


def jacobian_spectrum_fields(J: np.ndarray) -> dict:
    """Spectral radius, gap, distance of 1 to the spectrum, resolvent norm,
    and modal condition number of a (possibly 1x1) Jacobian matrix."""
    J = np.atleast_2d(np.asarray(J, dtype=float))
    eigvals, eigvecs = np.linalg.eig(J)
    rho = float(np.abs(eigvals).max())
    dist_one = float(np.abs(1.0 - eigvals).min())
    sigma = np.linalg.svd(np.eye(J.shape[0]) - J, compute_uv=False)
    resolvent = float(1.0 / sigma[-1]) if sigma[-1] > 0 else math.inf
    kappa = float(np.linalg.cond(eigvecs))
    if not np.isfinite(kappa) or kappa > MODAL_CONDITION_CAP:
        kappa = math.inf
    return {
        "spectral_radius": rho,
        "spectral_gap": 1.0 - rho,
        "dist_one_spectrum": dist_one,
        "resolvent_norm": resolvent,
        "modal_condition": kappa,
    }


# ---------------------------------------------------------------------------
# Implicit differentiation of the solution map
# ---------------------------------------------------------------------------


def _solve_constraint_system(plan: np.ndarray, rhs_row: np.ndarray, rhs_col: np.ndarray):
    """Least-norm solution of A [df; dg] = [rhs_row; rhs_col].

    A is singular along the gauge ray; the right-hand sides produced by
    differentiating the marginal constraints are always consistent, so the
    pseudoinverse solve is exact.
    """
    A = assemble_block_operator(plan)
    rhs = np.concatenate([rhs_row, rhs_col])
    sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    n = plan.shape[0]
    return sol[:n], sol[n:]


def epsilon_sensitivity(sol: TransportSolution) -> np.ndarray:
    """Entrywise derivative of the optimal plan with respect to temperature.

    Differentiating ``log P_ij = (f_i + g_j - C_ij)/eps`` under fixed
    marginals gives ``dP = (P/eps) * (df (+) dg - log P)`` where the potential
    rates solve the block constraint system with right-hand side
    ``sum_j P_ij log P_ij`` (rows) and its column analogue.
    """
    plan = sol.plan
    logP = np.log(np.maximum(plan, np.finfo(float).tiny))
    weighted = plan * logP
    fd, gd = _solve_constraint_system(plan, weighted.sum(axis=1), weighted.sum(axis=0))
    return (plan / sol.epsilon) * (fd[:, None] + gd[None, :] - logP)


def cost_direction_response(sol: TransportSolution, direction: np.ndarray) -> np.ndarray:
    """Derivative of the optimal plan along a cost perturbation direction."""
    plan = sol.plan
    weighted = plan * direction
    fd, gd = _solve_constraint_system(plan, weighted.sum(axis=1), weighted.sum(axis=0))
    return (plan / sol.epsilon) * (fd[:, None] + gd[None, :] - direction)


def _cost_sensitivity_norm(sol: TransportSolution, support_mask, rng: np.random.Generator) -> float:
    """Lower estimate of the plan-vs-cost operator norm.

    Maximizes the Frobenius response over canonical single-entry directions
    on the active support plus eight random unit directions.
    """
    n = sol.n
    best = 0.0
    entries = np.argwhere(support_mask) if support_mask is not None else [
        (i, j) for i in range(n) for j in range(n)
    ]
    for i, j in entries:
        d = np.zeros((n, n))
        d[int(i), int(j)] = 1.0
        best = max(best, float(np.linalg.norm(cost_direction_response(sol, d))))
    for _ in range(8):
        d = rng.standard_normal((n, n))
        d /= np.linalg.norm(d)
        best = max(best, float(np.linalg.norm(cost_direction_response(sol, d))))
    return best


def _iteration_cost_derivative_matrix(sol: TransportSolution) -> np.ndarray:
    """Dense matrix of the one-round map's derivative w.r.t. the cost, in plan
    tangent coordinates (input row-major cost direction, output plan tangent)."""
    plan = sol.plan
    n = sol.n
    R, Q = _conditionals(plan)
    out = np.empty((n * n, n * n))
    for k in range(n):
        for l in range(n):
            dC = np.zeros((n, n))
            dC[k, l] = 1.0
            df = (R * dC).sum(axis=1)
            dg = (Q * (dC - df[:, None])).sum(axis=0)
            dPhi = plan * (df[:, None] + dg[None, :] - dC) / sol.epsilon
            out[:, k * n + l] = dPhi.ravel()
    return out


def _iteration_cost_derivative_norm(sol: TransportSolution) -> float:
    n = sol.n
    if n <= 24:
        return float(np.linalg.svd(_iteration_cost_derivative_matrix(sol), compute_uv=False)[0])
    # power iteration on the normal operator for larger instances
    plan = sol.plan
    R, Q = _conditionals(plan)

    def apply(dC):
        df = (R * dC).sum(axis=1)
        dg = (Q * (dC - df[:, None])).sum(axis=0)
        return plan * (df[:, None] + dg[None, :] - dC) / sol.epsilon

    def apply_adjoint(Y):
        W = plan * Y / sol.epsilon
        a = W.sum(axis=1)
        b = W.sum(axis=0)
        out = -W + R * a[:, None] + Q * b[None, :]
        out -= R * ((Q * b[None, :]).sum(axis=1))[:, None]
        return out

    rng = np.random.default_rng(0)
    v = rng.standard_normal(plan.shape)
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(300):
        w = apply_adjoint(apply(v))
        sigma = math.sqrt(float(np.linalg.norm(w)))
        v = w / np.linalg.norm(w)
    return sigma


def hessian_scale_estimate(
    C: CostMatrix,
    epsilon: float,
    cfg: SolveConfig,
    base: TransportSolution,
    *,
    rel_step: float = 1e-3,
) -> float:
    """Finite-difference scale of the second temperature derivative of the
    solve map: ||P(eps+h) - 2 P(eps) + P(eps-h)|| / h^2 with h = eps*rel_step."""
    h = epsilon * rel_step
    tight = SolveConfig(
        tolerance=min(cfg.tolerance, 1e-11),
        max_iterations=cfg.max_iterations,
        epsilon_floor=min(cfg.epsilon_floor, (epsilon - h) * 0.5),
    )
    plus = sinkhorn_solve(C, epsilon + h, tight, warm_start=base)
    minus = sinkhorn_solve(C, epsilon - h, tight, warm_start=base)
    return float(np.linalg.norm((plus.plan - 2.0 * base.plan + minus.plan) / h**2))


# ---------------------------------------------------------------------------
# The per-temperature report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralReport:
    epsilon: float
    spectral_radius: float
    spectral_gap: float
    resolvent_norm: float
    dist_one_spectrum: float
    modal_condition: float
    sensitivity_eps_norm: float
    sensitivity_cost_norm: float
    hessian_scale: float
    partialC_norm: float

    def to_json_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "spectral_radius": self.spectral_radius,
            "spectral_gap": self.spectral_gap,
            "resolvent_norm": self.resolvent_norm,
            "dist_one_spectrum": self.dist_one_spectrum,
            "modal_condition": self.modal_condition,
            "sensitivity_eps_norm": self.sensitivity_eps_norm,
            "sensitivity_cost_norm": self.sensitivity_cost_norm,
            "hessian_scale": self.hessian_scale,
            "partialC_norm": self.partialC_norm,
        }


def spectral_report(
    C: CostMatrix,
    epsilon: float,
    cfg: SolveConfig = SolveConfig(),
    *,
    warm_start: TransportSolution | None = None,
    support_eta: float | None = None,
    seed: int = 0,
) -> SpectralReport:
    """Solve at ``epsilon`` and fill every spectral/sensitivity field.

    Cost-direction probing prefers canonical perturbations on the detected
    active support (threshold ``support_eta``, default 0.5/n); when the
    support does not separate at that threshold, all canonical entries are
    probed instead.
    """
    sol = sinkhorn_solve(C, epsilon, cfg, warm_start=warm_start)
    if not sol.converged:
        raise ConvergenceError(
            f"sinkhorn did not converge at epsilon={epsilon!r} "
            f"(residual {sol.marginal_residual!r})"
        )
    J = sinkhorn_jacobian(sol, C)
    fields = jacobian_spectrum_fields(J)
    eta = 0.5 / sol.n if support_eta is None else support_eta
    try:
        mask = detect_active_support(sol, eta).mask(sol.n)
    except NoSeparationError:
        mask = None
    rng = np.random.default_rng(seed)
    sens_eps = float(np.linalg.norm(epsilon_sensitivity(sol)))
    sens_cost = _cost_sensitivity_norm(sol, mask, rng)
    hess = hessian_scale_estimate(C, epsilon, cfg, sol)
    partial = _iteration_cost_derivative_norm(sol)
    return SpectralReport(
        epsilon=float(epsilon),
        sensitivity_eps_norm=sens_eps,
        sensitivity_cost_norm=sens_cost,
        hessian_scale=hess,
        partialC_norm=partial,
        **fields,
    )


@dataclass(frozen=True)
class DualityCheck:
    passed: bool
    slack: float
    lhs: float
    rhs: float


def duality_check(report: SpectralReport, *, rel_slack: float = 0.05) -> DualityCheck:
    """Check dist(1, spec(J)) <= ||d_C Phi|| / ||DS|| up to a relative slack.

    A sensitivity blow-up forces the spectrum toward unit gain; the reported
    slack is how far above the bound the spectral distance sits (negative
    when the inequality holds with room).
    """
    if not report.sensitivity_cost_norm > 0.0:
        raise InvalidInputError("duality check requires sensitivity_cost_norm > 0")
    rhs = report.partialC_norm / report.sensitivity_cost_norm
    lhs = report.dist_one_spectrum
    slack = lhs / rhs - 1.0
    return DualityCheck(passed=bool(slack <= rel_slack), slack=float(slack), lhs=lhs, rhs=float(rhs))


# ---------------------------------------------------------------------------
# Pseudospectrum grid
# ---------------------------------------------------------------------------


def pseudospectrum_grid(
    J: np.ndarray,
    re_range: tuple[float, float],
    im_range: tuple[float, float],
    resolution: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Smallest singular value of (z I - J) over a rectangular grid of z.

    Returns (re_axis, im_axis, sigma) with sigma[k, l] evaluated at
    z = re_axis[l] + i * im_axis[k], ready for contour plotting.
    """
    if resolution < 2:
        raise InvalidInputError("resolution must be at least 2")
    J = np.atleast_2d(np.asarray(J, dtype=float))
    eye = np.eye(J.shape[0])
    re_axis = np.linspace(re_range[0], re_range[1], resolution)
    im_axis = np.linspace(im_range[0], im_range[1], resolution)
    sigma = np.empty((resolution, resolution))
    for k, im in enumerate(im_axis):
        for l, re in enumerate(re_axis):
            z = complex(re, im)
            sigma[k, l] = np.linalg.svd(z * eye - J, compute_uv=False)[-1]
    return re_axis, im_axis, sigma


def write_pseudospectrum_csv(fh, re_axis, im_axis, sigma) -> None:
    fh.write("re,im,sigma_min\n")
    for k, im in enumerate(im_axis):
        for l, re in enumerate(re_axis):
            fh.write(f"{float(re)!r},{float(im)!r},{float(sigma[k, l])!r}\n")


# ---------------------------------------------------------------------------
# Constant-estimation sweep
# ---------------------------------------------------------------------------

CONSTANTS_CSV_HEADER = "eps,op_norm,C0_est,dS_de_norm,K1_est,K2_est,rho_mean,rho_std"


@dataclass(frozen=True)
class ConstantRow:
    eps: float
    op_norm: float
    C0_est: float
    dS_de_norm: float
    K1_est: float
    K2_est: float
    rho_mean: float
    rho_std: float


def _spectral_radius(plan: np.ndarray) -> float:
    n = plan.shape[0]
    U = _gauge_basis(n)
    J = U.T @ _jacobian_full(plan) @ U
    return float(np.abs(np.linalg.eigvals(J)).max())


def estimate_constants(
    C: CostMatrix,
    eps_list,
    seeds: int,
    *,
    cfg: SolveConfig = SolveConfig(),
    jitter_scale: float = 1e-3,
    base_seed: int = 0,
) -> list[ConstantRow]:
    """Per-temperature constants behind the scaling laws.

    For each eps: the plan's largest singular value, the inverse minimal
    eigenvalue of the gauge-fixed block operator, the temperature-sensitivity
    norm, and the rescaled combinations eps * ||dP/deps|| and
    eps^2 * hessian_scale, which should both flatten when the 1/eps and
    1/eps^2 laws hold. Contraction statistics (rho mean/std) are taken over
    ``seeds`` cost replicas: the base instance first, then copies with fresh
    uniform jitter of size ``jitter_scale`` sharing the planted structure.
    """
    if seeds < 1:
        raise InvalidInputError("seeds must be a positive integer")
    rows = []
    warm = None
    for eps in eps_list:
        sol = sinkhorn_solve(C, float(eps), cfg, warm_start=warm)
        if not sol.converged:
            raise ConvergenceError(f"sweep solve did not converge at eps={eps!r}")
        warm = sol
        op_norm = float(np.linalg.svd(sol.plan, compute_uv=False)[0])
        lam = _gauge_projected_min_eigenvalue(sol.plan)
        c0 = float(1.0 / lam) if lam > 0.0 else math.inf
        ds = float(np.linalg.norm(epsilon_sensitivity(sol)))
        k2 = float(eps) ** 2 * hessian_scale_estimate(C, float(eps), cfg, sol)
        rhos = [_spectral_radius(sol.plan)]
        for s in range(1, seeds):
            rng = np.random.default_rng(np.random.SeedSequence([base_seed, s]))
            jitter = rng.uniform(0.0, jitter_scale, (C.n, C.n))
            Cs = CostMatrix(C.cost + jitter, C.row_marginal, C.col_marginal)
            sol_s = sinkhorn_solve(Cs, float(eps), cfg, warm_start=sol)
            rhos.append(_spectral_radius(sol_s.plan))
        rhos = np.asarray(rhos)
        rows.append(
            ConstantRow(
                eps=float(eps),
                op_norm=op_norm,
                C0_est=c0,
                dS_de_norm=ds,
                K1_est=float(eps) * ds,
                K2_est=k2,
                rho_mean=float(rhos.mean()),
                rho_std=float(rhos.std()),
            )
        )
    return rows


def write_constants_csv(fh, rows) -> None:
    fh.write(CONSTANTS_CSV_HEADER + "\n")
    for row in rows:
        fh.write(
            f"{row.eps!r},{row.op_norm!r},{row.C0_est!r},{row.dS_de_norm!r},"
            f"{row.K1_est!r},{row.K2_est!r},{row.rho_mean!r},{row.rho_std!r}\n"
        )
