"""Exception hierarchy shared by all modules.

The command-line runner maps these onto exit codes: configuration problems
exit with 2, numerical failures with 3 and invariant violations with 1.
"""


class EllnetError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(EllnetError, ValueError):
    """Invalid user input or a violated precondition."""


class GridMismatchError(ConfigError):
    """Two grid functions or operators live on different grids."""


class UnsupportedOrderError(ConfigError):
    """A derivative order outside the supported stencil range was requested."""


class GapConditionError(ConfigError):
    """The inverse spectral gap does not exceed the perturbation level."""


class PerturbationFloorError(ConfigError):
    """A perturbation would destroy ellipticity or zeroth-order positivity."""


class NumericalError(EllnetError, ArithmeticError):
    """A computation produced non-finite values or failed to converge."""


class SamplingError(NumericalError):
    """A closed-form field produced a non-finite value on the grid."""


class AssemblyError(NumericalError):
    """The coefficient field is not elliptic at some grid location."""


class SolverError(NumericalError):
    """An iterative solver did not reach its tolerance."""


class EvaluationError(NumericalError):
    """Graph evaluation produced a non-finite intermediate value."""


class NotDifferentiableError(EllnetError, ValueError):
    """A graph contains an activation without an available derivative."""


class InvariantViolation(EllnetError, AssertionError):
    """A checked mathematical invariant failed."""
