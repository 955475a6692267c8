"""Exception hierarchy.

Validation-type errors map to CLI exit status 1, numerical failures to 2.
"""


class VecmatchError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class ValidationError(VecmatchError, ValueError):
    """Input data violates a structural requirement."""


class SchemaError(ValidationError):
    """A declared column is missing from the input file."""


class ParseError(ValidationError):
    """A value in the input file could not be parsed."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class ContractError(VecmatchError, ValueError):
    """A precondition of an operation was violated by the caller."""


class EmptySupportError(ValidationError):
    """Common-support trimming left an arm without units."""

    def __init__(self, message, arm=None):
        super().__init__(message)
        self.arm = arm


class DegenerateDataError(ValidationError):
    """A statistic is undefined for the supplied data."""


class UndefinedEstimateError(ValidationError):
    """An estimate or mean has no mass to average over."""


class RankDeficientError(ValidationError):
    """A linear model design matrix has aliased terms."""

    def __init__(self, message, terms=()):
        super().__init__(message)
        self.terms = tuple(terms)


class NumericalError(VecmatchError, ArithmeticError):
    """Linear algebra breakdown (e.g. singular Hessian)."""

    exit_code = 2


class ConvergenceError(NumericalError):
    """An iterative fit did not reach its convergence criterion."""
