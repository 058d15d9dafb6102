"""Exception and warning types shared across the package."""


class GridJacError(Exception):
    """Base class for all package errors."""


class ParseError(GridJacError):
    """Malformed network document.

    ``location`` is either a JSON path such as ``buses[3].kind`` or a
    ``line:col`` pair for syntax errors.
    """

    def __init__(self, message, location=None):
        self.location = location
        if location is not None:
            message = f"{location}: {message}"
        super().__init__(message)


class ConnectivityError(GridJacError):
    """The closed-branch graph does not span every bus."""


class DimensionError(GridJacError, ValueError):
    pass


class RangeError(GridJacError, ValueError):
    pass


class SingularJacobian(GridJacError):
    pass


class NonConvergence(GridJacError):
    """Newton-Raphson hit its iteration cap.

    The best state seen so far is kept on the exception so callers can
    inspect or reuse it.
    """

    def __init__(self, message, state=None, iterations=0, mismatch=float("inf")):
        super().__init__(message)
        self.state = state
        self.iterations = iterations
        self.mismatch = mismatch


class InsufficientData(GridJacError, ValueError):
    pass


class NoTLSSolution(GridJacError):
    pass


class NumericalError(GridJacError):
    pass


class RootSelectionError(GridJacError):
    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class DegenerateSeries(GridJacError, ValueError):
    pass


class MetricError(GridJacError, ValueError):
    pass


class TIFailure(GridJacError):
    pass


class RankDeficientWarning(UserWarning):
    """OLS fell back to the Moore-Penrose pseudo-inverse."""


class IllConditionedWarning(UserWarning):
    """TLS singular-value gap is degenerate; solution is not unique."""
