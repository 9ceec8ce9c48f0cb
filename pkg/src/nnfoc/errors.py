"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes (see ``nnfoc.cli``).
"""

from __future__ import annotations


class NNFocError(Exception):
    """Base class for every error raised by nnfoc."""


class ConfigError(NNFocError, ValueError):
    """Invalid configuration value or missing configuration entry."""


class DomainError(NNFocError, ValueError):
    """An argument lies outside the domain of an operation."""


class StateError(NNFocError, RuntimeError):
    """An object is used before it is ready (e.g. unfitted normalization)."""


class ControllerFault(NNFocError, ArithmeticError):
    """A controller received a non-finite input."""


class SimulationDiverged(NNFocError, ArithmeticError):
    """The plant state became non-finite.

    ``step`` is the index of the offending step and ``trace`` (when the
    closed loop raised it) holds the rows recorded before divergence.
    """

    def __init__(self, step: int, message: str = "", trace=None):
        self.step = step
        self.trace = trace
        super().__init__(message or f"simulation diverged at step {step}")


class TrainingDiverged(NNFocError, ArithmeticError):
    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"training loss became non-finite at epoch {epoch}")


class NoSteadyIntervals(NNFocError):
    """Ground-truth manufacture found nothing to rectify."""


class HPOFailed(NNFocError):
    def __init__(self, message: str, trials=None):
        self.trials = trials or []
        super().__init__(message)


class StageFailed(NNFocError):
    """A pipeline stage failed; wraps the original exception."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
