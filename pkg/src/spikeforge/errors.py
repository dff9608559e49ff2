"""Exception types shared across the toolkit."""


class SpikeForgeError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(SpikeForgeError):
    """A layer's input/parameter shapes are inconsistent.

    Messages always name the offending layer index.
    """


class NonFiniteError(SpikeForgeError):
    """A forward pass produced NaN or Inf values."""


class StructureError(SpikeForgeError):
    """The layer sequence violates a structural precondition
    (e.g. batchnorm not directly preceded by a convolution)."""


class ConversionError(SpikeForgeError):
    """A conversion step received invalid arguments or an
    unsupported layer kind."""


class MissingScaleError(ConversionError):
    """Normalization stats do not cover a required layer."""


class BundleError(SpikeForgeError):
    """Base class for interchange-bundle I/O errors."""


class ManifestError(BundleError):
    """The manifest is unparsable or missing required fields."""


class UnsupportedVersionError(BundleError):
    """The manifest declares a format major version this reader
    does not understand."""


class UnknownLayerKindError(BundleError):
    """The manifest names a layer kind outside the supported set."""


class TruncatedBlobError(BundleError):
    """A tensor record points past the end of the weight blob."""


class OffsetError(BundleError):
    """Tensor byte offsets overlap or are not ascending."""


class CalibrationError(BundleError):
    """The calibration descriptor or payload is invalid."""
