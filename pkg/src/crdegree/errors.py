"""Exception hierarchy.

Hypothesis failures (the input violates an assumption of the degree formula)
are kept apart from numerical failures so the CLI can map them to distinct
exit codes.
"""


class CRDegreeError(Exception):
    """Base class for all package errors."""


class HypothesisError(CRDegreeError):
    """An input violates a hypothesis of the degree formula."""


class NotMorseError(HypothesisError):
    pass


class NonPositiveError(HypothesisError):
    """K is not strictly positive on the sphere."""


class ConditionViolation(HypothesisError):
    """The diagonal nondegeneracy quantity vanishes at a critical point."""


class DegenerateConfigurationError(HypothesisError):
    """The least eigenvalue of an interaction matrix is numerically zero."""

    def __init__(self, message, subset=None, mu=None):
        super().__init__(message)
        self.subset = subset
        self.mu = mu


class QuadratureError(CRDegreeError):
    """Adaptive quadrature did not reach the requested tolerance."""

    def __init__(self, message, estimates=()):
        super().__init__(message)
        self.estimates = tuple(estimates)


class ChartError(CRDegreeError):
    """A point lies on the cut locus of a chart."""


class SolverError(CRDegreeError):
    """Newton iteration failed."""

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)


class BrouwerError(CRDegreeError):
    """Target is not a regular value or a zero sits on the boundary."""


class NoBlowupError(CRDegreeError):
    pass


class FormatError(CRDegreeError):
    """Malformed K specification."""
