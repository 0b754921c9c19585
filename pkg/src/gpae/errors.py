"""Exception types shared across the package."""


class GpaeError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(GpaeError):
    """Input data violates a precondition (empty clip, bad shape, ...)."""


class UnsupportedRateError(InvalidInputError):
    """Audio is not at the canonical 32 kHz sample rate."""


class InvalidConfigError(GpaeError):
    """A configuration value is out of range or inconsistent."""


class ModelIntegrityError(GpaeError):
    """Weights do not match the architecture they claim to implement."""


class NumericFailureError(GpaeError):
    """A forward pass produced non-finite values."""


class FormatError(GpaeError):
    """A serialized file is malformed. Carries the byte offset of the failure."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class InvalidTaskError(GpaeError):
    """A probe task is degenerate (e.g. fewer than two distinct labels)."""


class ConfigurationError(GpaeError):
    """Score-normalization configuration is missing or inconsistent."""
