"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value or shape is inconsistent with the model."""


class DataError(ValueError):
    """Input data is malformed (NaNs, shape mismatches, bad ranges)."""


class FormatError(ValueError):
    """A serialized file does not match its documented format."""
