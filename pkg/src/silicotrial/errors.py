"""Exception hierarchy shared across the package."""


class SilicoTrialError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SilicoTrialError, ValueError):
    """Invalid spec, plan, or run configuration."""


class DomainError(SilicoTrialError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class SchemaError(SilicoTrialError, ValueError):
    """Vector width, enum value, or schema version does not match."""


class DataError(SilicoTrialError, ValueError):
    """Training data is unusable (non-finite values, wrong label type)."""


class AllocationError(SilicoTrialError, ValueError):
    """A cohort cannot supply the cases a trial plan requires."""


class TrainingError(SilicoTrialError, RuntimeError):
    """A simulator cannot be trained on the records given."""


class UndefinedMetricError(SilicoTrialError, ValueError):
    """The metric is undefined on this input (e.g. single-class AUC)."""


class MissingInputError(SilicoTrialError, FileNotFoundError):
    """A referenced input file or bundle does not exist."""
