"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class SegsolveError(Exception):
    """Base class for package errors."""


class ConfigurationError(SegsolveError, ValueError):
    """Invalid domain, problem or run configuration."""


class GridMismatchError(SegsolveError, ValueError):
    """Fields or states bound to different grids were combined."""


class DomainError(SegsolveError, ValueError):
    """A geometric request (ball, annulus, subdomain) leaves the domain."""


class InadmissibleDataError(SegsolveError, ValueError):
    """Boundary data violate nonnegativity or disjointness."""


class A2ViolationError(SegsolveError):
    """The coercivity assumption fails for some density; minimization is refused."""

    def __init__(self, index: int, min_eigenvalue: float):
        self.index = index
        self.min_eigenvalue = min_eigenvalue
        super().__init__(
            f"A2 fails for density {index + 1}: smallest eigenvalue {min_eigenvalue:.6g} <= 0"
        )


class ConvergenceError(SegsolveError, RuntimeError):
    """An inner iteration did not converge."""


class BarrierDivergenceError(ConvergenceError):
    """Picard iteration for an upper barrier diverged."""

    def __init__(self, index: int, detail: str = ""):
        self.index = index
        super().__init__(f"barrier iteration diverged for density {index + 1}" + (f": {detail}" if detail else ""))
