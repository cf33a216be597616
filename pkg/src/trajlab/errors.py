"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage/config problems exit 1, data
problems exit 2, numeric failures exit 3.
"""


class TrajlabError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(TrajlabError):
    """Array dimensions do not line up for the requested operation."""


class MaskError(TrajlabError):
    """Attention mask is malformed (wrong shape or an all-masked query row)."""


class ConfigError(TrajlabError):
    """Invalid or inconsistent configuration value."""


class DataError(TrajlabError):
    """Problem with the input data."""


class ParseError(DataError):
    """Malformed dataset file; carries file, line number and reason."""

    def __init__(self, path, line_no, reason):
        self.path = str(path)
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"{self.path}:{line_no}: {reason}")


class FitError(DataError):
    """Estimation failed (too few points, degenerate input)."""


class ModelError(TrajlabError):
    """Model misuse: wrong mode, empty input, inconsistent mask layout."""


class SamplingError(TrajlabError):
    """Sampling asked for with invalid inputs (non-finite logits etc.)."""


class TrainingError(TrajlabError):
    """Non-finite loss or gradient; carries enough context to locate it."""
