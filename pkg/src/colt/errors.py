class ColtError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(ColtError, ValueError):
    pass


class DegenerateInputError(ColtError, ValueError):
    pass


class ContractError(ColtError, RuntimeError):
    """A precondition between two calls was violated (stale trace, bad ids, ...)."""


class ParseError(ColtError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class PoolExhaustedError(ColtError, RuntimeError):
    pass
