"""Exception types shared across the package."""


class VecdiffError(Exception):
    """Base class for all package-specific errors."""


class UnsupportedFeature(VecdiffError):
    """SVG input uses a feature outside the supported subset."""

    def __init__(self, message, locator=None):
        super().__init__(message if locator is None else f"{message} (at {locator})")
        self.locator = locator


class MalformedPathData(VecdiffError):
    """A path d-attribute does not follow the SVG path grammar."""


class InvalidSpec(VecdiffError):
    """A toy-dataset class grammar violates the dataset constraints."""


class DegeneratePath(VecdiffError):
    """Path bounding box is too small to canonicalize."""


class TooManyPaths(VecdiffError):
    """Document exceeds the fixed number of path slots."""


class ShapeMismatch(VecdiffError):
    """Tensor arguments have incompatible shapes."""


class NumericalGuard(VecdiffError):
    """Refused an operation that would divide by a vanishing coefficient."""


class Diverged(VecdiffError):
    """Training loss became non-finite."""


class ConfigError(VecdiffError):
    """Invalid training or model configuration."""


class AlreadyAttached(VecdiffError):
    """Low-rank adapters are already attached to the model."""


class NotAttached(VecdiffError):
    """No low-rank adapters are attached to the model."""


class RemoteUnavailable(VecdiffError):
    """Remote embedding service unreachable after retries."""


class UnknownStyle(VecdiffError):
    """Style name is not present in the registry."""


class TeacherUnavailable(VecdiffError):
    """Teacher service unreachable after retries."""


class MalformedResponse(VecdiffError):
    """Teacher or embedder returned a payload that does not match the protocol."""


class CorruptCheckpoint(VecdiffError):
    """Checkpoint container failed validation (magic, offsets, truncation)."""


class VersionMismatch(VecdiffError):
    """Checkpoint schema version is not supported."""


class InsufficientSamples(VecdiffError):
    """Not enough samples for a stable metric estimate."""
