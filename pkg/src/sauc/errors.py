class DomainError(ValueError):
    """An argument lies outside the domain an operation is defined on."""


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class StateError(RuntimeError):
    """An object was used before it was ready (e.g. an unfitted calibrator)."""


class MetricUndefinedError(DomainError):
    pass
