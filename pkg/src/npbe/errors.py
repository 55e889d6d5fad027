"""Exception types shared across the package."""


class NPBEError(Exception):
    """Base class for all errors raised by :mod:`npbe`."""


class DomainError(NPBEError, ValueError):
    """Invalid domain or grid description."""


class HypothesisViolation(NPBEError, ValueError):
    """Coefficients violate ellipticity or the eigenvalue bound on mu/theta."""


class ConvergenceError(NPBEError, RuntimeError):
    """An iterative procedure did not reach its tolerance."""


class SolveError(NPBEError, RuntimeError):
    """A linear factorization or solve failed."""


class BranchRangeError(NPBEError, ValueError):
    """Requested parameter lies outside the computed branch."""


class ConfigError(NPBEError, ValueError):
    """Invalid run configuration."""

    def __init__(self, message, key=None, line=None):
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.key = key
        self.line = line


class NonlinearOverflow(NPBEError, ArithmeticError):
    """``sinh`` of an iterate overflowed double precision."""
