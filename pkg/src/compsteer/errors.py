"""Exception types shared across the package.

Every error raised on a contract violation derives from CompsteerError so
callers (and the command line front end) can catch one base class and turn
it into a structured error record.
"""

from __future__ import annotations


class CompsteerError(Exception):
    """Base class for all package-specific errors."""


class InvalidInput(CompsteerError):
    """An argument violates a documented precondition (empty payload, bad size)."""


class WrongCodecFamily(CompsteerError):
    """A codec was used with a measure or operation it does not support."""


class CodecError(CompsteerError):
    """A compression backend failed while producing a size."""


class InvalidDistance(CompsteerError):
    """A distance input is negative, non-finite, or malformed."""


class DimensionError(CompsteerError):
    """Vector or matrix shapes do not line up."""


class InvalidPartition(CompsteerError):
    """Cluster labels or class index maps do not cover the data exactly."""


class TooFewLeaves(CompsteerError):
    """A dendrogram is too small for the requested operation."""


class UndefinedSilhouette(CompsteerError):
    """Silhouette is undefined (fewer than two clusters)."""


class InvalidCount(CompsteerError):
    """A requested count is outside the feasible range."""


class IncompleteRow(CompsteerError):
    """A sample row is missing distances required by the embedding model."""


class ClassTooSmall(CompsteerError):
    """A class has too few members for the requested operation."""


class InsufficientReferences(CompsteerError):
    """Too few reference objects to compute row statistics."""


class MissingStats(CompsteerError):
    """Row statistics are required but absent for some object."""


class MeasureMismatch(CompsteerError):
    """An operation received a matrix built under an incompatible measure."""


class InvalidFold(CompsteerError):
    """A fold plan references unknown ids or is empty."""


class DegenerateLabels(CompsteerError):
    """Training labels collapse to a single class."""


class MissingFragments(CompsteerError):
    """A file has no fragments to vote over."""


class EmptyClass(CompsteerError):
    """A class directory contains no usable files."""


class CorpusReadError(CompsteerError):
    """A corpus file could not be read; carries the offending path."""

    def __init__(self, path, reason: str = ""):
        self.path = str(path)
        message = f"cannot read {self.path}"
        if reason:
            message += f": {reason}"
        super().__init__(message)
