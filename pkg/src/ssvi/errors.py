"""Semantic exception hierarchy shared across the package."""


class SsviError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateSigmaError(SsviError, ValueError):
    """A criterion requiring sigma > 0 was evaluated at sigma = 0."""


class CriterionOverflowError(SsviError, OverflowError):
    """An exponential-criterion value exceeds double-precision range."""


class DimensionMismatchError(SsviError, ValueError):
    """Array shapes are inconsistent with the layer or batch contract."""


class TapeMismatchError(SsviError, ValueError):
    """A backward pass received a tape produced by a different layer."""


class BudgetError(SsviError, ValueError):
    """Sparsity budget outside [1, d] or inconsistent with the mask."""


class InsufficientCandidatesError(SsviError, ValueError):
    """Fewer masked coordinates available than requested for addition."""


class NonFiniteLossError(SsviError, FloatingPointError):
    """Training loss became NaN/Inf; the step is aborted."""


class ConfigError(SsviError, ValueError):
    """A run configuration failed validation; message names the field."""


class DataError(SsviError, ValueError):
    """Dataset construction or parsing failed."""


class IdxFormatError(DataError):
    """IDX file violates the expected byte layout; message carries offsets."""


class CsvFormatError(DataError):
    """CSV file violates the schema; message carries line/column."""


class CheckpointError(SsviError):
    """Checkpoint file is missing, corrupt, or of an unknown version."""


class BackendError(SsviError, RuntimeError):
    """Requested kernel backend is unavailable."""
