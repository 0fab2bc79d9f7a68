"""Exception hierarchy shared across the harness."""


class HarnessError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(HarnessError):
    """A dataset directory or checkpoint container does not match the expected layout."""


class DataError(HarnessError):
    """The data itself is unusable (empty file, non-monotonic timestamps, ...)."""


class SchemaError(HarnessError):
    """Contents disagree with the declared schema (e.g. unknown label string)."""


class EmptySetError(DataError):
    """An operation would produce or consume an empty window set."""


class IntegrityError(HarnessError):
    """Checkpoint weights disagree with their manifest."""


class ConfigError(HarnessError):
    """An experiment configuration failed validation."""


class TrainingDiverged(HarnessError):
    """A training run produced a non-finite loss."""

    def __init__(self, message, method=None, epoch=None, step=None):
        super().__init__(message)
        self.method = method
        self.epoch = epoch
        self.step = step
