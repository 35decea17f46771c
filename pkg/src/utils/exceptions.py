"""
Custom exceptions for the GRID label-noise-robust learning project.
"""

from typing import List, Optional


class GridError(Exception):
    """Base class for every error raised by the project."""

    pass


class ShapeError(GridError):
    """Exception raised when tensor shapes do not conform for an operation."""

    pass


class GradientError(GridError):
    """Exception raised when a backward pass is requested on invalid inputs."""

    pass


class DataLoadError(GridError):
    """Exception raised when a dataset or checkpoint file cannot be loaded."""

    pass


class InvalidDataError(GridError):
    """Exception raised when data validation fails."""

    pass


class NoiseInjectionError(GridError):
    """Exception raised when label noise cannot be injected as requested."""

    pass


class ConfigError(GridError):
    """
    Exception raised when an experiment configuration is invalid.

    Attributes:
        errors: Field-level messages, one per offending field.
    """

    def __init__(self, message: str, errors: Optional[List[str]] = None) -> None:
        self.errors = list(errors or [])
        if self.errors:
            message = message + ": " + "; ".join(self.errors)
        super().__init__(message)


class TrainingError(GridError):
    """Exception raised when a training step cannot be carried out."""

    pass


class EvaluationError(GridError):
    """Exception raised when an evaluation cannot be computed."""

    pass


class DatabaseError(GridError):
    """Exception raised when results database operations fail."""

    pass


class VisualizationError(GridError):
    """Exception raised when plot data or plot rendering fails."""

    pass
