"""
Exception types shared by the graphon, dynamics, pde and metrics modules.

Each class maps to one of the CLI exit codes; see ``exit_code_for``.
"""
from typing import Optional

EXIT_SUCCESS = 0
EXIT_TOLERANCE_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_NUMERICAL_ERROR = 3


class GraphonSystemError(Exception):
    """Base class for every error raised by this package."""

    exit_code = EXIT_NUMERICAL_ERROR


class ConfigError(GraphonSystemError, ValueError):
    """Unresolved registry name, malformed spec string or invalid config file."""

    exit_code = EXIT_CONFIG_ERROR


class LabelDomainError(GraphonSystemError, ValueError):
    """A label lies outside [0, 1] or a sample set is empty."""

    exit_code = EXIT_CONFIG_ERROR


class ShapeError(GraphonSystemError, ValueError):
    """Block measures, partitions or grids do not line up."""

    exit_code = EXIT_CONFIG_ERROR


class PartitionError(GraphonSystemError, ValueError):
    """A label partition has an empty class or does not cover [0, 1]."""

    exit_code = EXIT_CONFIG_ERROR


class CapabilityError(GraphonSystemError):
    """The requested exact computation is beyond the supported size."""

    exit_code = EXIT_CONFIG_ERROR


class CoefficientError(GraphonSystemError, ValueError):
    """A coefficient violates its declared Lipschitz constant or bound."""

    exit_code = EXIT_CONFIG_ERROR


class QuadratureError(GraphonSystemError, ArithmeticError):
    """Adaptive quadrature did not reach the requested tolerance."""

    def __init__(self, message: str, achieved: float, requested: float):
        super().__init__(f"{message} (achieved {achieved:.3e}, requested {requested:.3e})")
        self.achieved = achieved
        self.requested = requested


class NumericalBlowupError(GraphonSystemError, ArithmeticError):
    """A particle state became NaN or infinite."""

    def __init__(self, step: int, time: float):
        super().__init__(f"non-finite particle state at step {step} (t={time:.6g})")
        self.step = step
        self.time = time


class StabilityError(GraphonSystemError, ArithmeticError):
    """The explicit drift term violates the Courant limit."""

    def __init__(self, courant: float, limit: float, suggested_dt: float):
        super().__init__(
            f"Courant number {courant:.3g} exceeds {limit:.3g}; use dt <= {suggested_dt:.3e}"
        )
        self.courant = courant
        self.limit = limit
        self.suggested_dt = suggested_dt


class SolverFaultError(GraphonSystemError, ArithmeticError):
    """The finite-volume solver produced a negative density or lost mass."""

    def __init__(self, message: str, step: Optional[int] = None):
        if step is not None:
            message = f"{message} at step {step}"
        super().__init__(message)
        self.step = step


def exit_code_for(exc: BaseException) -> int:
    """Return the CLI exit code for an exception."""
    if isinstance(exc, GraphonSystemError):
        return exc.exit_code
    if isinstance(exc, (FileNotFoundError, KeyError)):
        return EXIT_CONFIG_ERROR
    return EXIT_NUMERICAL_ERROR
