"""Exception hierarchy shared by every module in the package."""

from __future__ import annotations


class GraspForceError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(GraspForceError, ValueError):
    """An argument violates a documented precondition."""


class ConfigError(InvalidArgumentError):
    """A pipeline configuration value is invalid."""


class DataError(GraspForceError, ValueError):
    """Input data could not be parsed or is inconsistent.

    ``line`` is the 1-based line number in the source file when known.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalFailureError(GraspForceError, ArithmeticError):
    """A recursion produced non-finite values or hit a singular matrix."""

    def __init__(self, message: str, step: int | None = None):
        self.step = step
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)


class ConvergenceError(NumericalFailureError):
    """An iteration did not reach its tolerance within the allowed budget."""

    def __init__(self, message: str, delta: float, iterations: int):
        self.delta = delta
        self.iterations = iterations
        super().__init__(f"{message} (last delta {delta:.3e} after {iterations} iterations)")


class DivergenceError(NumericalFailureError):
    """Training loss became non-finite."""

    def __init__(self, message: str, epoch: int):
        self.epoch = epoch
        super().__init__(f"epoch {epoch}: {message}")
