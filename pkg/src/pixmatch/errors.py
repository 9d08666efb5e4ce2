"""Error types shared across the package."""


class PixmatchError(Exception):
    """Base class for package-specific failures."""


class ConfigError(PixmatchError):
    """Bad or inconsistent configuration value."""


class DatasetError(PixmatchError):
    """Malformed dataset directory or file."""


class CheckpointError(PixmatchError):
    """Unreadable, corrupted, or incompatible checkpoint."""
