"""Exception hierarchy shared by every module in the package."""


class MobiloadError(Exception):
    """Base class; the CLI maps these to exit status 1 (user/data error)."""


class ConfigError(MobiloadError):
    """Bad manifest/config content, unknown keys, or inconsistent settings."""


class MissingFile(MobiloadError):
    """A referenced input file does not exist."""


class MissingCheckpoint(MobiloadError):
    """Evaluation or projection asked for a checkpoint that is not on disk."""


class SchemaMismatch(MobiloadError):
    """CSV header, column type, or value violates the documented schema."""


class GapTooLarge(MobiloadError):
    """Hourly channel gap exceeds the interpolation limit (or has no anchor)."""


class InvalidSpec(MobiloadError):
    """Synthetic-data or scenario spec violates its invariants."""


class DegenerateChannel(MobiloadError):
    """min == max on a channel, so min-max normalization is undefined."""


class SpanTooShort(MobiloadError):
    """Requested span cannot produce a single valid sample."""


class SpanConflict(MobiloadError):
    """Date spans overlap or sit outside the data they must lie in."""


class ShapeMismatch(MobiloadError):
    """Array shape inconsistent with the network architecture."""


class DimensionMismatch(MobiloadError):
    """Data dimensions do not match the model or paired arrays."""


class EmptyInput(MobiloadError):
    """An operation that needs at least one element got none."""


class NonFiniteLoss(MobiloadError):
    """Training diverged. Carries the last finite parameters and partial log."""

    def __init__(self, message, params=None, log=None):
        super().__init__(message)
        self.params = params
        self.log = log


class UnknownTask(MobiloadError):
    """Task id not present in the multi-task model."""


class ZeroActual(MobiloadError):
    """Actual load <= 0 encountered while computing percentage errors."""


class MismatchedTestSets(MobiloadError):
    """Variants were scored on different prediction sets."""


class WindowTooShort(MobiloadError):
    """Mobility statistics window shorter than the 7-day minimum."""


class ModelWithoutMobility(MobiloadError):
    """Scenario projection needs a checkpoint with a mobility segment."""


class SpanMismatch(MobiloadError):
    """Scenario target and template spans disagree (or exceed the data)."""
