"""Error types raised across the simulator."""

from typing import Optional


class SimulatorError(Exception):
    """Base class for all simulator errors."""


class ConfigurationError(SimulatorError, ValueError):
    """Invalid scenario, band, grid or codebook configuration."""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.field = field


class DomainError(SimulatorError, ValueError):
    """Input outside the mathematical domain of an operation."""


class TraceFormatError(SimulatorError, ValueError):
    """Malformed binary trace or checkpoint container."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class SingularityError(SimulatorError, ArithmeticError):
    """Matrix too ill-conditioned to invert."""


class NumericalError(SimulatorError, ArithmeticError):
    """Log-det argument not Hermitian positive semi-definite."""


class ShapeError(SimulatorError, ValueError):
    """Network input or architecture mismatch."""


class InvalidActionError(SimulatorError, ValueError):
    """Action not available in the current band."""
