"""
Exception Hierarchy

All errors raised on purpose by the hs2s-motion library derive from HS2SError,
so callers (the CLI in particular) can separate expected data/model failures
from programming errors.

Argument-like errors also derive from ValueError so numpy-style callers can
keep catching ValueError.
"""

from typing import Dict, Optional


class HS2SError(Exception):
    """Base class for every error raised by the library."""


class ShapeError(HS2SError, ValueError):
    """Array dimensions do not agree with the declared parameters."""


class ArgumentError(HS2SError, ValueError):
    """An argument is outside its documented domain."""


class FormatError(HS2SError, ValueError):
    """An input file does not follow the expected text format."""


class StatsError(HS2SError, ValueError):
    """Normalization statistics cannot be applied to the data."""


class DataError(HS2SError, ValueError):
    """The dataset cannot support the requested operation."""


class SelectionError(HS2SError, ValueError):
    """A clip selection references frames outside its sequence."""


class ConfigError(HS2SError):
    """A run configuration is malformed or contains unknown keys."""


class NonFiniteGradientError(HS2SError):
    """
    Raised when an optimizer receives NaN or infinite gradients.

    Attributes:
        diagnostics: block name -> number of non-finite entries
    """

    def __init__(self, message: str, diagnostics: Optional[Dict[str, int]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class CheckpointError(HS2SError):
    """Base class for checkpoint container failures."""


class CorruptionError(CheckpointError):
    """Checksum mismatch or truncated container."""


class VersionError(CheckpointError):
    """Container written with an unsupported format version."""


class StructureError(CheckpointError):
    """Container blocks disagree with the header manifest."""
