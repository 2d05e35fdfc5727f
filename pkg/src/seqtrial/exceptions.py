"""Exception hierarchy shared across the package."""


class SeqTrialError(Exception):
    """Base class for all errors raised by seqtrial."""


class DomainError(SeqTrialError, ValueError):
    """An argument lies outside the domain of a numerical function."""


class BracketError(SeqTrialError, ValueError):
    """The supplied bracket does not contain a sign change."""


class ConvergenceError(SeqTrialError, RuntimeError):
    """An iterative solver failed to converge."""


class AccuracyError(SeqTrialError, RuntimeError):
    """A quadrature scheme could not reach its error target."""


class ValidationError(SeqTrialError, ValueError):
    """Input data violate one or more invariants.

    Attributes:
        errors: every violation found, as human-readable strings.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class DegenerateVarianceError(SeqTrialError, ValueError):
    """Pooled response proportion is 0 or 1, so the Wald variance vanishes."""


class UnsupportedDesignError(SeqTrialError, ValueError):
    """The design is outside what the estimators support."""


class UnsupportedPerspectiveError(SeqTrialError, ValueError):
    """A conditional estimator was requested for a trial that stopped at stage 1."""


class InsufficientConditioningError(SeqTrialError, RuntimeError):
    """Too few replicates continued to stage 2 for a conditional summary."""
