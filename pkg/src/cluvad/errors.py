"""Exception hierarchy shared across the package."""


class CluvadError(Exception):
    """Base class for all package errors."""


class IngestError(CluvadError):
    """Malformed input file (bad cell, bad header, unreadable)."""


class SpacingError(IngestError):
    """Timestamps are not uniformly spaced."""


class DuplicateTimestampError(IngestError):
    """The same timestamp appears more than once."""


class BoundsError(CluvadError):
    """Index range outside the frame."""


class SchemaError(CluvadError):
    """Feature names or shapes do not match."""


class CleaningError(CluvadError):
    """A feature cannot be IQR-cleaned."""


class InsufficientDataError(CluvadError):
    """Fewer observations than the operation requires."""


class ParameterError(CluvadError):
    """An argument is outside its valid range."""


class InsufficientExcessError(CluvadError):
    """Too few exceedances above the initial threshold for a GPD fit."""


class AlignmentError(CluvadError):
    """Series that must cover the same timesteps do not."""


class NumericError(CluvadError):
    """A non-finite value where a finite one is required."""


class AttributionError(CluvadError):
    """Feature attribution cannot run on the given period."""


class SynthSpecError(CluvadError):
    """Invalid synthetic-data specification."""


class PipelineError(CluvadError):
    """A pipeline stage failed; the manifest records the stage."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class ReportError(CluvadError):
    """A report cannot be rendered from the run directory."""
