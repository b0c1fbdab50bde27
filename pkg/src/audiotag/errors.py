"""Exception types shared across the toolkit."""


class AudioTagError(Exception):
    """Base class for all toolkit errors."""


class FormatError(AudioTagError):
    """Malformed or unsupported file content (WAV headers, cache records)."""


class ManifestError(AudioTagError):
    """Bad annotation or fold-assignment manifest (parse errors, duplicates, conflicts)."""


class ConfigError(AudioTagError):
    """Invalid configuration value."""


class DataError(AudioTagError):
    """Input data violates an operation's precondition (empty, too short, missing class)."""


class ShapeError(AudioTagError):
    """Array dimensions do not match the expected topology."""


class MetricError(AudioTagError):
    """A metric is undefined for the given inputs or a report is incomplete."""
