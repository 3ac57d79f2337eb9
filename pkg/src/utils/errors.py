"""
Error hierarchy for the BEV mapping toolkit.

Validation problems subclass ValueError and numerical failures subclass
ArithmeticError, so callers can keep catching the builtin types.
"""

from typing import Optional


class BevMappingError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(BevMappingError, ValueError):
    """Bad input, bad parameters or a violated invariant."""


class GridFormatError(ValidationError):
    """
    A grid file could not be parsed or failed validation.

    Args:
        message: What went wrong
        path: File that was being read, if any
    """

    def __init__(self, message: str, path: Optional[str] = None):
        self.path = path
        if path is not None:
            message = f"{path}: {message}"
        super().__init__(message)


class OsmParseError(ValidationError):
    """Malformed OSM XML or a way referencing an unknown node."""


class PlacementError(ValidationError):
    """Rejection sampling found no admissible placement."""


class OutOfExtentError(ValidationError):
    """A point or object lies outside the BEV grid extent."""


class LayoutError(ValidationError):
    """Simulator parameters that leave no road cell in the grid."""


class StageError(ValidationError):
    """
    Pipeline failure attributed to a named stage.

    Args:
        stage: Pipeline stage name (e.g. "load", "project")
        cause: The underlying exception
    """

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")


class NumericalError(BevMappingError, ArithmeticError):
    """Non-finite values appeared during optimisation or training."""
