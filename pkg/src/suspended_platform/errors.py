"""Exception hierarchy.

The CLI maps :class:`ScenarioError` to exit code 1, every
:class:`NumericalError` to exit code 2 and :class:`OutputError` to 3.
"""


class ScenarioError(ValueError):
    """Invalid or unparsable scenario description."""


class NumericalError(ArithmeticError):
    """A numerical routine could not produce a trustworthy result."""


class SingularMassMatrixError(NumericalError):
    """Joint-space inertia is numerically singular (unphysical parameters)."""


class GimbalLockError(NumericalError):
    """ZYX Euler angles are degenerate at pitch = +-pi/2."""


class InnovationError(NumericalError):
    """Innovation covariance is not invertible."""


class NotStabilizableError(NumericalError):
    """(A, B) has an uncontrollable mode that is not asymptotically stable."""

    def __init__(self, message, mode=None):
        super().__init__(message)
        self.mode = mode


class TaskSingularityError(NumericalError):
    """Task Jacobian lost rank; ``direction`` is the lost task direction."""

    def __init__(self, message, direction=None):
        super().__init__(message)
        self.direction = direction


class ActuationDegenerateError(NumericalError):
    """The stacked actuation/nullspace matrix is singular."""


class SimulationAborted(NumericalError):
    """A run stopped early; ``t`` and ``x`` record where."""

    def __init__(self, message, t=None, x=None):
        super().__init__(message)
        self.t = t
        self.x = x


class OutputError(OSError):
    """Reading or writing a harness file failed."""
