"""Exception hierarchy shared by all camkit modules."""


class CamKitError(Exception):
    """Base class for every error raised by camkit."""


class MissingComponent(CamKitError):
    """A required file (manifest, tensor, annotation) is absent."""


class ShapeError(CamKitError):
    """Tensor shapes are inconsistent with the declared contract."""


class NonFiniteData(CamKitError):
    """A tensor contains NaN or Inf values."""


class FormatError(CamKitError):
    """A file does not conform to its on-disk format."""


class IoError(CamKitError):
    """Reading or writing a file failed at the OS level."""


class ModelLoadError(CamKitError):
    """A model graph could not be loaded or violates the scorer contract."""


class ScoringError(CamKitError):
    """A scorer failed to produce logits for an input."""


class AnnotationError(CamKitError):
    """A ground-truth annotation violates its invariants."""


class ConfigError(CamKitError):
    """A configuration value is out of its legal range."""


class RangeError(CamKitError):
    """A numeric argument lies outside its documented domain."""
