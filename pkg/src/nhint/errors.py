"""Exception hierarchy shared by the library and the CLI."""


class NhintError(Exception):
    """Base class for all library errors."""


class ConfigurationError(NhintError, ValueError):
    """Unknown system, bad method name, malformed config value."""


class CompatibilityError(NhintError, ArithmeticError):
    """The constraint Gram matrix ``mu g^-1 mu^T`` is singular."""


class InconsistentInitialDataError(NhintError, ValueError):
    """Initial state does not satisfy the nonholonomic constraint."""


class NonConvergenceError(NhintError, RuntimeError):
    """Newton iteration failed; carries the best iterate found."""

    def __init__(self, message, x=None, residual=None, iterations=0):
        super().__init__(message)
        self.x = x
        self.residual = residual
        self.iterations = iterations


class SolvabilityError(NonConvergenceError):
    """Shooting could not reach the requested endpoint."""


class StepFailure(NhintError, RuntimeError):
    """A step of a long integration failed.

    ``trajectory`` holds every state accepted before the failing step and
    ``step_index`` the index of the step that could not be taken.
    """

    def __init__(self, message, trajectory, step_index, cause=None):
        super().__init__(message)
        self.trajectory = trajectory
        self.step_index = step_index
        self.cause = cause
