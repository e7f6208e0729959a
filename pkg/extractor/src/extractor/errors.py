"""Extractor-side exceptions (deliberately independent of the core package)."""


class ExtractorError(Exception):
    pass


class ConfigError(ExtractorError):
    """Bad extractor configuration (unknown model/layer, shape mismatch)."""


class IoError(ExtractorError):
    """Unreadable image or unwritable output."""


class ExportError(ExtractorError):
    """Model could not be converted to the portable graph format."""
