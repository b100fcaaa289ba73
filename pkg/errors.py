"""Exception hierarchy shared by the simulator modules and the CLI.

Every error carries the exit code the command-line tool reports for it:
2 for invalid input, 3 for numerical failures. I/O errors are plain
OSError and map to 4 in porolim_cli.py.
"""

from typing import Optional


class PorolimError(Exception):
    exit_code = 1


class ConfigError(PorolimError, ValueError):
    """Invalid run configuration, model parameters or preset name."""
    exit_code = 2


class InsufficientDataError(PorolimError):
    """A diagnostic needs data the trajectory was not recorded with."""
    exit_code = 2


class NumericalError(PorolimError):
    exit_code = 3


class StabilityError(NumericalError):
    """A time step produced a saturation outside [0, 1]."""

    def __init__(self, message: str, cell: Optional[int] = None, value: Optional[float] = None):
        super().__init__(message)
        self.cell = cell
        self.value = value


class IntegrationError(NumericalError):
    """Adaptive quadrature did not reach its tolerance within max_depth."""

    def __init__(self, message: str, estimate: float = float('nan'), where: Optional[float] = None):
        super().__init__(message)
        self.estimate = estimate
        self.where = where


class ModelInconsistencyError(NumericalError):
    """Both phase mobilities vanish at the same saturation."""
