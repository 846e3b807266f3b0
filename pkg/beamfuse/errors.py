"""Exception hierarchy for beamfuse."""

from __future__ import annotations


class BeamfuseError(Exception):
    """Base class for all beamfuse errors."""


class ShapeError(BeamfuseError, ValueError):
    """Raised when operand dimensions disagree or values are not finite."""


class DataError(BeamfuseError):
    """Raised when external data (model, corpus, vocab) is inconsistent."""


class ModelFormatError(DataError):
    """Raised when a BFM1 model file cannot be parsed."""


class TokenRangeError(DataError, ValueError):
    """Raised when a token id falls outside the model vocabulary."""


__all__ = [
    "BeamfuseError",
    "DataError",
    "ModelFormatError",
    "ShapeError",
    "TokenRangeError",
]
