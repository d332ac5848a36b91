"""Exception types shared across the toolkit."""


class CrsnError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(CrsnError):
    """Numeric input is malformed (non-finite entries, bad shape)."""


class UnstablePlantError(CrsnError):
    """An operation that requires a stable plant got rho(A) >= 1."""


class InfeasibleLambdaError(CrsnError):
    """Channel availability too low for a bounded mean covariance."""


class RiccatiDivergenceError(CrsnError):
    """A Riccati fixed-point iteration failed to converge."""


class IllConditionedTriggerError(CrsnError):
    """Trigger matrix too close to singular to invert reliably."""


class InvalidRateError(CrsnError):
    """Requested communication rate outside the achievable range."""


class InfeasibleQualityBoundError(CrsnError):
    """Quality bound M does not dominate the scheduler-independent floor."""


class SingularQError(CrsnError):
    """Q is singular but the operation needs Q^{-1} (strict mode)."""


class WidenGridError(CrsnError):
    """The grid filter lost probability mass off the edge of the grid."""


class ConfigError(CrsnError):
    """Malformed experiment configuration."""


class SolverError(CrsnError):
    """The conic solver could not produce a usable solution."""

    def __init__(self, message, status=None, solution=None):
        super().__init__(message)
        self.status = status
        self.solution = solution
