"""Exception hierarchy shared by every ternlac module."""


class TernlacError(Exception):
    """Base class for all library errors."""


class ShapeError(TernlacError, ValueError):
    """Operand shapes do not compose."""


class DomainError(TernlacError, ValueError):
    """A value lies outside the domain an operation accepts."""


class CorruptionError(TernlacError, ValueError):
    """Packed ternary data contains a reserved or stray code."""


class DegenerateInputError(TernlacError, ValueError):
    """Input is well-formed but makes the operation meaningless."""


class FormatError(TernlacError, ValueError):
    """A binary file does not follow the TNSR/TERN layout."""


class SchemaError(TernlacError, ValueError):
    """A structured-text file violates its schema.

    ``path`` names the offending field, e.g. ``layers[2].stride``.
    """

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class DivergenceError(TernlacError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, epoch: int | None = None):
        self.epoch = epoch
        super().__init__(message)
