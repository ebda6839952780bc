"""Entropy-regularized optimal transport with stability-controlled annealing.

A log-domain Sinkhorn solver, spectral/sensitivity diagnostics of its fixed
point, a drift-gated temperature controller with offline safety-slope
calibration, a scalar tracking-error simulator for schedule analysis, and a
synthetic experiment harness.
"""

from .control import (
    AnnealRun,
    AnnealState,
    CalibrationResult,
    ControllerConfig,
    CostProcess,
    Decision,
    ExponentialSchedule,
    GumbelExponentialSchedule,
    QuadraticSchedule,
    calibrate_k_safe,
    controller_decide,
    measure_drift,
    perturb_cost,
    run_annealing,
    schedule_step,
)
from .errors import (
    CalibrationError,
    ConvergenceError,
    InvalidInputError,
    JacobianMismatchError,
    NoSeparationError,
    NumericalFailureError,
    OTAnnealError,
    SingularOperatorError,
)
from .harness import (
    RunSummary,
    SyntheticTask,
    diagnostics_sweep,
    generate_spread_task,
    generate_task,
    run_comparison,
)
from .spectral import (
    ActiveSupport,
    BlockOperator,
    ConstantRow,
    DualityCheck,
    SpectralReport,
    build_block_operator,
    detect_active_support,
    duality_check,
    epsilon_sensitivity,
    estimate_constants,
    jacobian_spectrum_fields,
    pseudospectrum_grid,
    sinkhorn_jacobian,
    spectral_report,
)
from .tracking import (
    CriticalEpsilon,
    TrackingParams,
    TrackingTrace,
    critical_epsilon,
    simulate_tracking,
    steady_state_bound,
)
from .transport import (
    CostMatrix,
    SolveConfig,
    TransportSolution,
    load_cost_csv,
    load_cost_json,
    log_kernel,
    marginal_residual,
    plan_entropy,
    round_to_assignment,
    save_cost_csv,
    save_cost_json,
    sinkhorn_solve,
)

__version__ = "0.1.0"
