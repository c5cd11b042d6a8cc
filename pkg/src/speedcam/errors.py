"""Exception hierarchy shared across the package.

Everything raised on bad input or bad state derives from SpeedcamError so
the CLI can map domain failures to a single exit code.
"""


class SpeedcamError(Exception):
    """Base class for all package errors."""


class FormatError(SpeedcamError):
    """Malformed document or value (PGM header, model JSON/XML, time string)."""


class BoundsError(SpeedcamError):
    """A rectangle or feature grid does not lie inside the image."""


class ConfigError(SpeedcamError):
    """Invalid configuration or parameter value."""


class NoScaleError(ConfigError):
    """The frame is smaller than the minimum detection window."""


class UnsupportedModelError(SpeedcamError):
    """The cascade document is valid but not a supported variant."""


class ModelReferenceError(SpeedcamError):
    """A weak classifier references a feature index that does not resolve."""


class TimeOrderError(SpeedcamError):
    """Timestamps are not strictly increasing."""


class InsufficientDataError(SpeedcamError):
    """Not enough samples or windows to produce a result."""


class CollisionError(SpeedcamError):
    """A record with the same picture filename already exists."""


class RefusedError(SpeedcamError):
    """A destructive operation was attempted without confirmation."""


class DecodeError(SpeedcamError):
    """Base64 payload text cannot be decoded."""


class PayloadSizeError(SpeedcamError):
    """Serialized payload exceeds the configured byte ceiling."""


class TransportError(SpeedcamError):
    """HTTP request failed or returned a non-2xx status."""

    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


class ProtocolError(SpeedcamError):
    """Server response did not match the expected JSON shape."""


class StorageError(SpeedcamError):
    """Record store directory is missing or unreadable."""
