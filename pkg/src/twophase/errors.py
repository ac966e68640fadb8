"""Exception types raised across the package."""


class TwoPhaseError(Exception):
    """Base class for all package errors."""


class DegenerateModel(TwoPhaseError):
    """Constitutive laws violate a structural hypothesis (e.g. m_0 <= 0)."""


class InvalidMesh(TwoPhaseError):
    """Mesh geometry is degenerate or inconsistent."""


class InvalidParams(TwoPhaseError):
    """Parameters outside their admissible range."""


class SingularLinearization(TwoPhaseError):
    """The Newton linear system could not be solved."""


class Stagnation(TwoPhaseError):
    """Newton hit its iteration cap or the line search was exhausted."""


class ContinuationFailed(TwoPhaseError):
    """The (eps, eta) ladder could not be completed.

    Attributes
    ----------
    last_good : object
        Last accepted state, or ``None``.
    trace : object
        Partial continuation trace.
    step : int or None
        Time-step index when raised from the time loop.
    """

    def __init__(self, message, last_good=None, trace=None, step=None):
        super().__init__(message)
        self.last_good = last_good
        self.trace = trace
        self.step = step


class ConfigError(TwoPhaseError):
    """Case configuration is malformed or incomplete."""
