"""Exception hierarchy shared across the package."""


class MegdiffError(Exception):
    """Base class for all package errors."""


class ValidationError(MegdiffError, ValueError):
    """Invalid input values, shapes or configuration."""


class FormatError(MegdiffError):
    """A tensor bundle does not match its header."""


class SequenceError(ValidationError):
    """Stimulus word events violate ordering invariants."""


class SchemaError(ValidationError):
    """Stimulus or config content does not follow the expected schema."""


class RankDeficiencyError(MegdiffError, ArithmeticError):
    """Unregularized ridge solve on a rank-deficient design."""


class UndefinedCorrelationError(MegdiffError, ArithmeticError):
    """Correlation requested for a constant series."""


class InsufficientSubjectsError(ValidationError):
    pass


class TransportError(MegdiffError):
    """LLM endpoint failed after all retries."""


class EmptyProposalError(MegdiffError):
    """The proposer response contained no parseable hypotheses."""
