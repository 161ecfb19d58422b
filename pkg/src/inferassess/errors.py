"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration problems exit 2, data
problems exit 3, numerical failures exit 4.
"""


class InferAssessError(Exception):
    """Base class for all package errors."""


class ConfigurationError(InferAssessError):
    """A spec/option combination that cannot be run (wrong method for the data,
    missing labels, unknown preset, ...)."""


class SchemaError(InferAssessError):
    """Column-role mapping refers to columns that do not exist."""


class ParseError(InferAssessError):
    """A cell could not be converted to the type its role requires."""


class ValidationError(InferAssessError):
    """Data violates an invariant (non-positive weight, NaN, broken nesting)."""


class SingularDesignError(InferAssessError):
    """Design matrix is rank deficient after absorption/weighting."""

    def __init__(self, column: int, message: str | None = None):
        self.column = column
        super().__init__(message or f"design matrix is rank deficient at column {column}")


class DegenerateTestError(InferAssessError):
    """The test statistic is undefined (zero standard error, zero variance,
    single cluster, ...)."""


class AssessmentAbortError(InferAssessError):
    """More than the tolerated share of replicates failed."""
