"""Exception types shared across the toolkit.

Separate classes let callers distinguish bad inputs from numerical
breakdown; the CLI maps them to distinct exit codes.
"""


class OTAnnealError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(OTAnnealError):
    """Raised when an argument violates a documented precondition."""


class NumericalFailureError(OTAnnealError):
    """Raised when a computation produced NaN/Inf or otherwise broke down."""


class ConvergenceError(OTAnnealError):
    """Raised by operations that require a converged solve and did not get one.

    Plain ``sinkhorn_solve`` never raises this: non-convergence there is a
    result, not an error. Downstream diagnostics that cannot proceed from a
    partial iterate do raise it.
    """


class NoSeparationError(OTAnnealError):
    """Active-support classification failed: the threshold band is populated."""


class SingularOperatorError(OTAnnealError):
    """The reduced marginal-constraint operator is numerically singular."""


class JacobianMismatchError(NumericalFailureError):
    """Analytic fixed-point Jacobian disagrees with finite differences."""


class CalibrationError(OTAnnealError):
    """Safety-slope calibration could not observe a collapse on any proxy."""
