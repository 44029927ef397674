"""Exception hierarchy shared by all modules."""


class CknError(Exception):
    """Base class for errors raised by this package."""


class DomainError(CknError, ValueError):
    """An argument lies outside the admissible domain."""


class DegenerateInputError(DomainError):
    """Input is admissible in type but degenerate (e.g. identically zero)."""


class InsufficientDataError(CknError):
    """A profile or sample sequence does not cover the requested range."""


class ParseError(CknError, ValueError):
    """Malformed input file.

    ``line`` is the 1-based line number of the offending row, or None.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConvergenceError(CknError, RuntimeError):
    """An iterative procedure failed to reach its tolerance.

    Carries the best estimate found and an error bound (or lower bound)
    so callers can decide whether to use it anyway.
    """

    def __init__(self, message, estimate=None, error=None):
        super().__init__(message)
        self.estimate = estimate
        self.error = error
