"""Exception types shared across the package."""


class GseditError(Exception):
    """Base class for all errors raised by gsedit."""


class ConfigError(GseditError):
    """Invalid configuration value or combination."""


class PlyFormatError(GseditError):
    """PLY file does not follow the expected Gaussian-splat layout."""


class ValidationError(GseditError):
    """Data failed a validity check (non-finite values, bad shapes, ...)."""


class EmptyRegionError(GseditError):
    """The bounding box selects no Gaussians for a task that needs some."""


class EmptyProjectionError(GseditError):
    """The bounding box projects to nothing (fully behind the near plane)."""


class RenderNumericalError(GseditError):
    """Screen-space covariance could not be inverted for a Gaussian."""

    def __init__(self, gaussian_index, message=""):
        self.gaussian_index = int(gaussian_index)
        super().__init__(message or f"conditioning failure at gaussian {gaussian_index}")


class GuidanceError(GseditError):
    """Base class for guidance-provider failures."""


class GuidanceTransportError(GuidanceError):
    """The remote guidance service could not be reached.

    Carries retry metadata so callers can decide whether to try again.
    """

    def __init__(self, message, attempts=1, retry_after=None):
        self.attempts = int(attempts)
        self.retry_after = retry_after
        super().__init__(message)


class GuidanceValidationError(GuidanceError):
    """A guidance payload failed validation (shape, finiteness, encoding)."""


class PipelineAbort(GseditError):
    """An editing stage aborted; carries the last good scene state."""

    def __init__(self, message, checkpoint=None, cause=None):
        self.checkpoint = checkpoint
        self.cause = cause
        super().__init__(message)
