"""Exception hierarchy.

Every error raised deliberately by the package derives from
:class:`SparseMvnError`; the CLI maps the three families below onto exit
codes (validation 2, numeric 3, I/O 4).
"""

from __future__ import annotations


class SparseMvnError(Exception):
    """Base class for package errors."""

    exit_code = 1


class ValidationError(SparseMvnError, ValueError):
    exit_code = 2


class NumericError(SparseMvnError, ArithmeticError):
    exit_code = 3


class IoError(SparseMvnError, OSError):
    exit_code = 4


# -- validation family -------------------------------------------------------

class InvalidParameter(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class VariantMismatch(ValidationError):
    pass


class InsufficientSamples(ValidationError):
    pass


class EmptyWindow(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, message: str, *, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.line = line
        self.field = field


class MissingColumn(ParseError):
    pass


class BadNumeric(ParseError):
    def __init__(self, message: str, *, row: int, field: str | None = None):
        super().__init__(message, line=row, field=field)
        self.row = row


# -- numeric family ----------------------------------------------------------

class NotPositiveDefinite(NumericError):
    pass


class DegenerateBetaX(NumericError):
    pass
