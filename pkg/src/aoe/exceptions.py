class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition."""


class DivergenceUndefinedError(ValueError):
    """KL / cross-entropy requested where the reference has zero mass."""


class PreconditionError(ValueError):
    """A step size or regime assumption required by a theory check fails."""


class CsvParseError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CsvSchemaError(CsvParseError):
    """Row width disagrees with the header."""
