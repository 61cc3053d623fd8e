"""Exception types raised across the toolkit."""


class TabAdvError(Exception):
    """Base class for all toolkit errors."""


class SchemaError(TabAdvError):
    """The data file does not match the declared schema."""


class ParseError(TabAdvError):
    """A cell or row could not be parsed; message names the location."""


class PreprocessingError(TabAdvError):
    """Imputation or encoding cannot proceed (e.g. all-missing feature)."""


class StratificationError(TabAdvError):
    """A class is too small to be represented in every split."""


class StatisticsError(TabAdvError):
    """Distribution statistics could not be fitted or factorized."""


class TrainingError(TabAdvError):
    """Training diverged; message names the epoch."""


class ShapeError(TabAdvError):
    """Tensor operands have incompatible shapes."""


class ContractError(TabAdvError):
    """A call violated an operation precondition."""


class UndefinedCorrelationError(ContractError):
    """Correlation requested for a zero-variance series."""
