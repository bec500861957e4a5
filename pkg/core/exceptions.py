"""
Exception hierarchy shared by every app.

Densities never raise for impossible values; they return ``-inf``. The
exceptions below are for contract breaches and numerical failures, and the
CLI maps them onto exit codes (see ``cli.dispatch``).
"""
from django.core.exceptions import ValidationError


class EpiRegimeError(Exception):
    """Base class for all library errors."""


class ConstraintError(EpiRegimeError, ValueError):
    """A parameter value violates one of its invariants."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class ShapeError(EpiRegimeError, ValueError):
    """A vector or array has the wrong length or shape."""


class DomainError(EpiRegimeError, ValueError):
    """A density was evaluated outside its parameter domain."""


class NumericalError(EpiRegimeError, ArithmeticError):
    """Non-finite values appeared during integration."""

    def __init__(self, message, state=None):
        self.state = state
        super().__init__(message)


class DegeneracyError(EpiRegimeError, RuntimeError):
    """Every particle (or outer particle) carries zero weight."""

    def __init__(self, message, t=None):
        self.t = t
        super().__init__(message)


class PreconditionError(EpiRegimeError, ValueError):
    """A caller broke an operation's precondition."""


class AlignmentError(EpiRegimeError, ValueError):
    """Two series do not cover the same time window."""


class DataValidationError(ValidationError):
    """An input file failed schema or content validation."""

    def __init__(self, message, path=None, row=None, column=None):
        self.path = path
        self.row = row
        self.column = column
        location = ", ".join(
            part for part in (
                f"file {path}" if path is not None else None,
                f"row {row}" if row is not None else None,
                f"column {column}" if column is not None else None,
            ) if part
        )
        super().__init__(f"{location}: {message}" if location else message)

    def __str__(self):
        return self.messages[0]


VALIDATION_ERRORS = (
    DataValidationError,
    ConstraintError,
    ShapeError,
    PreconditionError,
    AlignmentError,
)

NUMERICAL_ERRORS = (
    NumericalError,
    DegeneracyError,
    DomainError,
)
