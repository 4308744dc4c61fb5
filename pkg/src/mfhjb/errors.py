"""Exception hierarchy shared across the package."""


class MFHJBError(Exception):
    """Base class for all package errors."""


class InvalidInputError(MFHJBError, ValueError):
    pass


class ConfigError(MFHJBError, ValueError):
    """A configuration violates a stated invariant (CFL, missing problem, ...)."""


class ResourceError(MFHJBError, MemoryError):
    """Requested grid or tensor exceeds the configured memory budget."""


class DivergenceError(MFHJBError, FloatingPointError):
    pass


class UnsupportedOperationError(MFHJBError, TypeError):
    pass


class DiagnosticError(MFHJBError, RuntimeError):
    """A diagnostic could not produce a meaningful number (e.g. all pairs degenerate)."""
