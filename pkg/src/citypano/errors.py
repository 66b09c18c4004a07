"""Exception types shared across the toolkit."""


class CityPanoError(Exception):
    """Base class for all toolkit errors."""


class DomainError(CityPanoError, ValueError):
    """Input outside an operation's stated domain (bad pixel, empty list, ...)."""


class DegenerateInput(CityPanoError, ValueError):
    """Geometrically degenerate input (zero-area polygon, point at camera, ...)."""


class OutOfDomain(CityPanoError, ValueError):
    """Query point outside a deformation grid; no extrapolation is performed."""


class FormatError(CityPanoError, ValueError):
    """Unparseable input file. Carries the 1-based line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NotCovered(CityPanoError, ValueError):
    """No terrain polygon underneath the queried plan location."""


class RankDeficiencyError(CityPanoError, ValueError):
    """Linear system is rank-deficient; re-run with lambda > 0."""


class ConvergenceError(CityPanoError, RuntimeError):
    """Iterative solver failed to converge. Carries the last iterate."""

    def __init__(self, message, last=None, residual=None):
        super().__init__(message)
        self.last = last
        self.residual = residual


class InsufficientData(CityPanoError, ValueError):
    """Too few correspondences/pairs for the requested solve."""
