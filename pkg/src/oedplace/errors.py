"""Exception types shared across the package."""


class ValidationError(ValueError):
    """A user-supplied argument or config entry violates a documented precondition."""


class StateError(RuntimeError):
    """An operation was invoked before the setup step it depends on."""


class CapabilityError(RuntimeError):
    """A request exceeds the problem scale a code path is meant for."""


class NumericalError(RuntimeError):
    """A linear or nonlinear solve failed to reach its tolerance.

    Parameters
    ----------
    message : str
        Human-readable description of the failure.
    residual : float, optional
        Relative residual observed when the failure was detected.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
