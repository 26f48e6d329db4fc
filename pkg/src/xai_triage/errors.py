"""Structured exception types shared across the package."""


class XaiTriageError(Exception):
    """Base class for every structured error this package raises."""


class ShapeError(XaiTriageError):
    """A tensor did not fit the layer it was fed to.

    ``layer_index`` names the offending layer (0-based); -1 means the
    network input itself.
    """

    def __init__(self, layer_index: int, message: str):
        self.layer_index = layer_index
        super().__init__(f"layer {layer_index}: {message}")


class TraceMismatchError(XaiTriageError):
    """An activation trace does not belong to the network it was used with."""


class ModelFormatError(XaiTriageError):
    """Model file failed to parse.  ``offset`` is the byte position."""

    def __init__(self, offset: int, message: str):
        self.offset = offset
        super().__init__(f"byte {offset}: {message}")


class ModelValidationError(XaiTriageError):
    """Model file parsed but describes an inconsistent network."""


class DegenerateDenominatorError(XaiTriageError):
    """A relevance denominator vanished while carrying nonzero relevance."""


class DivergenceError(XaiTriageError):
    """Optimization produced a non-finite loss.  ``iteration`` is where."""

    def __init__(self, iteration: int, message: str):
        self.iteration = iteration
        super().__init__(f"iteration {iteration}: {message}")


class BoxOutOfBoundsError(XaiTriageError):
    """A crop box does not lie inside its image."""


class ManifestError(XaiTriageError):
    """The manifest file itself is unusable (missing, unreadable)."""


class CodecError(XaiTriageError):
    """An image file failed to decode or encode."""


class ConfigError(XaiTriageError):
    """Pipeline configuration is invalid or references missing paths."""
