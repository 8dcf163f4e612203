"""Exception taxonomy shared across the package.

Every error raised by this package derives from :class:`EdganError` so callers
can catch the whole family at once. The CLI maps subfamilies to exit codes.
"""


class EdganError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(EdganError):
    """Tensor/matrix shapes are incompatible for the requested operation."""


class DomainError(EdganError):
    """An input value lies outside the mathematical domain of the operation."""


class ConfigError(EdganError):
    """A configuration value violates its documented constraints."""


class ContractError(EdganError):
    """A call violates an API precondition (empty batch, non-scalar loss, ...)."""


class GraphConsumedError(ContractError):
    """The computation graph was already used for a backward pass."""


class DataError(EdganError):
    """Raw input data cannot be used (parse failures, short series, ...)."""


class FormatError(DataError):
    """A file does not match its documented format."""


class VocabularyError(DataError):
    """A categorical value is missing from the registered vocabulary."""


class DegenerateInputError(DataError):
    """An input is degenerate for the requested statistic (e.g. constant target)."""


class NumericError(EdganError):
    """A non-finite value (NaN/Inf) appeared where finite values are required."""


class NumericAbort(NumericError):
    """Training aborted because a loss or gradient became non-finite.

    Carries enough context to locate the offending step.
    """

    def __init__(self, message, epoch=None, batch_index=None, term=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch_index = batch_index
        self.term = term
