"""Exception hierarchy shared by the library and the command line."""

from __future__ import annotations


class NetgamesError(Exception):
    """Base class for all library errors."""

    exit_code = 3


class InvalidParameter(NetgamesError, ValueError):
    exit_code = 2


class IsolatedNodeError(NetgamesError):
    """Raised when a quantity needs at least one neighbor."""


class ConditionViolation(NetgamesError):
    """An observability requirement on the sample is not met.

    ``condition`` names the requirement, e.g. ``"B"`` or ``"B1"``.
    """

    def __init__(self, condition: str, message: str):
        super().__init__(f"condition {condition} violated: {message}")
        self.condition = condition


class NumericalError(NetgamesError):
    exit_code = 4


class SingularInstruments(NumericalError):
    def __init__(self, message: str, eigenvalue: float | None = None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class RankDeficientDesign(NumericalError):
    pass


class SolverFailure(NumericalError):
    pass


class EmptyConfidenceSet(NetgamesError):
    pass


class FailureBudgetExceeded(NumericalError):
    """Too many Monte Carlo replications failed in some cell."""


class ConfigError(InvalidParameter):
    """A configuration file could not be read; ``where`` points at the field."""

    def __init__(self, message: str, where: str | None = None):
        super().__init__(f"{where}: {message}" if where else message)
        self.where = where
