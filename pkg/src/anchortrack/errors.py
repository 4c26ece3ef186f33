"""Exception hierarchy shared across the package.

The CLI maps these onto exit-code categories: parse/config errors -> 2,
data errors -> 3, numeric errors -> 4.
"""


class AnchorTrackError(Exception):
    """Base class for all package errors."""


class ConfigError(AnchorTrackError):
    """Invalid or inconsistent configuration."""


class ParseError(AnchorTrackError):
    """Malformed input file; message carries path and line number."""

    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class DataError(AnchorTrackError):
    """Structurally valid input violating a data contract."""


class GenerationError(AnchorTrackError):
    """Synthetic data generation could not satisfy its constraints."""


class NumericError(AnchorTrackError):
    """Non-finite values where finite numbers are required."""


class CheckpointError(AnchorTrackError):
    """Checkpoint missing, corrupt, or incompatible with the requested config."""
