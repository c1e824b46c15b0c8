"""Exception types shared across the toolkit."""

from __future__ import annotations


class SREError(Exception):
    """Base class for every error raised by srekit."""


class DomainError(SREError, ValueError):
    """A state or probe box lies outside the state space."""

    def __init__(self, message: str, coordinate: int | None = None, t: int | None = None):
        super().__init__(message)
        self.coordinate = coordinate
        self.t = t


class NumericError(SREError, ArithmeticError):
    """A recursion produced NaN or an infinite state."""

    def __init__(self, message: str, t: int | None = None, model_id: str | None = None):
        if t is not None:
            message = f"{message} (t={t})"
        if model_id is not None:
            message = f"{message} [model={model_id}]"
        super().__init__(message)
        self.t = t
        self.model_id = model_id


class ConfigurationError(SREError, ValueError):
    """Invalid parameters, settings or combinations of inputs."""
