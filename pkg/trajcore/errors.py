"""
Exception hierarchy for the trajectory engine.

Every error carries a short ``context`` string (row number, lesion key,
file path...) so the CLI can print a uniform ``stage: message: context`` line.
"""

from typing import Optional


class TrajectoryEngineError(ValueError):
    """Base class for all validation failures raised by the engine."""

    def __init__(self, message: str, context: str = ""):
        super().__init__(message)
        self.message = message
        self.context = context

    def __str__(self) -> str:
        if self.context:
            return f"{self.message}: {self.context}"
        return self.message


class InvalidTrajectoryError(TrajectoryEngineError):
    """A trajectory or volume violates a domain invariant."""


class InsufficientDataError(TrajectoryEngineError):
    """Not enough time points (or samples) for the requested operation."""


class ShapeError(TrajectoryEngineError):
    """Ragged or mis-dimensioned input."""


class ParseError(TrajectoryEngineError):
    """Malformed interchange file."""

    def __init__(self, message: str, row: Optional[int] = None, context: str = ""):
        if row is not None and not context:
            context = f"row {row}"
        super().__init__(message, context)
        self.row = row


class AlignmentError(TrajectoryEngineError):
    """Label volumes do not share the same grid."""


class ConfigError(TrajectoryEngineError):
    """Invalid or unknown configuration keys."""


class ModelError(TrajectoryEngineError):
    """Model fitting or prediction contract violated."""


class DegenerateMixtureError(ModelError):
    """A mixture component kept collapsing after max_reinit re-initialisations."""


class EvaluationError(TrajectoryEngineError):
    """Evaluation protocol cannot be carried out (e.g. single-class labels)."""
