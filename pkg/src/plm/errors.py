"""Exception types raised across the package."""


class PlmError(Exception):
    """Base class for all errors raised by :mod:`plm`."""


class InvalidParameter(PlmError, ValueError):
    """A parameter lies outside the range an operation accepts."""


class UnsupportedRegime(PlmError, ValueError):
    """The (p, N) regime is not covered by the requested computation."""


class BudgetInfeasible(PlmError, ValueError):
    """No decomposition meets the requested norm budget."""


class SupportViolation(PlmError, ValueError):
    """A mollified atom would leave the domain (or catch no grid node)."""


class StepFailure(PlmError, RuntimeError):
    """Newton iteration failed to reach the optimality tolerance.

    Attributes
    ----------
    residual : float
        Scaled gradient norm at the last iterate.
    step : int or None
        Time index of the failing step, when raised from a time march.
    """

    def __init__(self, message, residual=float("nan"), step=None):
        super().__init__(message)
        self.residual = residual
        self.step = step
