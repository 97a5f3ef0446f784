"""Exception hierarchy shared by all modules."""


class HdglmError(Exception):
    """Base class for every error raised by :mod:`hdglm`."""


class ValidationError(HdglmError, ValueError):
    """Input data or arguments violate a documented precondition."""


class DomainError(HdglmError, ValueError):
    """A family function was evaluated outside its numerical domain."""


class EstimationError(HdglmError):
    """The nuisance fit cannot proceed (e.g. singular information matrix)."""


class DegenerateStatisticError(HdglmError):
    """A statistic or its variance estimator is exactly zero."""


class NotConvergedError(HdglmError):
    """A test was requested on top of a nuisance fit that did not converge."""


class SimulationFailureError(HdglmError):
    """Too many replications of a power study failed."""
