"""Exception types shared across the package."""

from __future__ import annotations


class CvquadError(Exception):
    """Base class for all package errors."""


class ParameterError(CvquadError, ValueError):
    """A parameter lies outside the admissible range of an operation."""


class QuadratureError(CvquadError, RuntimeError):
    """Adaptive quadrature did not converge within its refinement budget."""

    def __init__(self, message: str, last: float, previous: float):
        super().__init__(f"{message} (last={last!r}, previous={previous!r})")
        self.last = last
        self.previous = previous


class ConfigError(CvquadError):
    """A configuration file could not be parsed or validated."""
