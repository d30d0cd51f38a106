"""Exception hierarchy shared across the package."""


class OdpartError(Exception):
    """Base class for all package errors."""


class InvalidInputError(OdpartError, ValueError):
    pass


class InvalidPairError(InvalidInputError):
    pass


class InvalidAssignmentError(InvalidInputError):
    pass


class InconsistencyError(OdpartError, ValueError):
    pass


class MissingCapacityError(OdpartError):
    pass


class MissingSpeedError(OdpartError):
    pass


class InsufficientSamplesError(OdpartError):
    pass


class DegenerateNetworkError(OdpartError):
    """The community graph cannot stand in for the road network."""


class ConstructionError(OdpartError):
    pass


class SolverError(OdpartError):
    """A quadratic sub-problem could not be solved.

    ``state`` carries the iterate at the time of failure for post-mortem use.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state or {}


class NumericalError(OdpartError, ArithmeticError):
    pass


class ConfigurationError(OdpartError, ValueError):
    pass


class EmptyReportError(InvalidInputError):
    """Every edge was excluded from an error metric."""
