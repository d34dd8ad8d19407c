"""
Error hierarchy shared by the library and the command line.

The CLI maps these onto exit codes (see src/decorators/cli_errors.py).
"""


class PairGuideError(Exception):
    """Base class for every error raised on purpose by this package."""


class ConfigError(PairGuideError):
    """Bad or inconsistent run configuration."""


class StorageError(PairGuideError):
    """A file could not be read, written or decoded."""


class NumericError(PairGuideError):
    """A computation produced NaN or Inf."""


class TrainingAborted(NumericError):
    """Training stopped on a non-finite loss; `dump_path` points at the diagnostic dump."""

    def __init__(self, message, dump_path=None):
        super().__init__(message)
        self.dump_path = dump_path


class ShapeError(PairGuideError, ValueError):
    """Operand shapes are incompatible."""


class RecordingDisabledError(PairGuideError, RuntimeError):
    """Attention terms were requested from a forward pass that did not record them."""


class EvaluationError(PairGuideError, ValueError):
    """Evaluation inputs are unusable (e.g. empty ground truth)."""
