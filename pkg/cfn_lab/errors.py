"""
Exception hierarchy and CLI exit codes
"""

from typing import Any, Optional


EXIT_OK = 0
EXIT_CONFIGURATION = 2
EXIT_DIVERGENCE = 3
EXIT_TRAINING = 4


class CfnLabError(Exception):
    """Base class for every error raised by cfn_lab."""


class ConfigurationError(CfnLabError, ValueError):
    """Invalid parameters, shapes or incompatible inputs."""


class UnsupportedOperationError(CfnLabError):
    """Operation not defined for the given variant, system or mesh."""


class PhysicalStateError(CfnLabError, ValueError):
    """A state outside the physical domain of a PDE system."""

    def __init__(self, variable: str, message: Optional[str] = None):
        self.variable = variable
        super().__init__(message or f"non-physical state: {variable} must be positive")


class DivergenceError(CfnLabError):
    """A time stepper produced non-finite values.

    ``partial`` carries whatever was computed before the failure, so callers
    can still persist it.
    """

    def __init__(
        self,
        message: str,
        partial: Any = None,
        step: Optional[int] = None,
        time: Optional[float] = None,
    ):
        super().__init__(message)
        self.partial = partial
        self.step = step
        self.time = time


class SolverBlowUpError(DivergenceError):
    """Classical reference solver blow-up."""

    def __init__(
        self,
        message: str,
        time: Optional[float] = None,
        trajectory_index: Optional[int] = None,
        partial: Any = None,
    ):
        super().__init__(message, partial=partial, time=time)
        self.trajectory_index = trajectory_index


class DataFormatError(CfnLabError):
    """Unreadable dataset or checkpoint."""


class MetricError(CfnLabError, ValueError):
    """Metric undefined for the given inputs."""


class TrainingError(CfnLabError):
    """Training finished without a usable checkpoint."""
