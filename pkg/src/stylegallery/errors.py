"""Exception types shared across the library, service, and CLI."""


class StyleGalleryError(Exception):
    """Base class for all library errors."""


class ResolutionError(StyleGalleryError, ValueError):
    """Image resolution is not accepted by a provider (stride mismatch)."""


class BackendUnavailableError(StyleGalleryError, RuntimeError):
    """A learned-model backend cannot be loaded in this environment."""


class FeatureUnavailableError(StyleGalleryError, RuntimeError):
    """An optional feature provider (e.g. depth) is missing."""


class LayerRangeError(StyleGalleryError, ValueError):
    """A requested attention layer id is outside the backend's range."""


class ShapeMismatchError(StyleGalleryError, ValueError):
    """Two grids or tensors that must align do not."""


class InvalidArgumentError(StyleGalleryError, ValueError):
    """A caller-supplied value violates an operation's contract."""


class StateConflictError(StyleGalleryError, RuntimeError):
    """A job operation was requested in the wrong lifecycle state."""


class GuidedSamplingError(StyleGalleryError, RuntimeError):
    """Non-finite loss or gradient encountered during guided sampling."""
