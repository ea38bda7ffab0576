"""Exception hierarchy shared by every stage of the pipeline.

Three base classes partition failures by origin, and the command line
front end maps them onto process exit codes: ConfigError exits 2,
DataError exits 3, NumericError exits 4.
"""

from __future__ import annotations


class GclsError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(GclsError):
    """Invalid configuration, generator spec, or artifact mismatch."""


class DataError(GclsError):
    """Malformed, missing, or insufficient input data."""


class NumericError(GclsError):
    """Numerical breakdown inside differentiable computation."""


class MalformedLine(DataError):
    """A trace line violates the record grammar."""

    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class EmptyTrace(DataError):
    """A trace file contains no instruction records."""


class MissingFile(DataError):
    """A manifest references a file that does not exist."""


class DuplicateLaunchId(DataError):
    """Two manifest entries share a launch id."""


class InvalidSpec(ConfigError):
    """A synthetic workload class spec fails validation."""


class ArtifactMismatch(ConfigError):
    """A stage input was produced under a different config or seed."""


class ShapeMismatch(NumericError):
    """Operands passed to a tensor primitive have incompatible shapes."""


class NonFiniteValue(NumericError):
    """A NaN or infinity appeared in a primitive's output."""


class DetachedLoss(NumericError):
    """backward() was called on a value the tape never recorded."""


class ZeroRow(NumericError):
    """A row with zero norm cannot be L2-normalized."""


class EmptyGraph(DataError):
    """An encoder input has no nodes."""


class NoWarps(DataError):
    """A kernel-level readout was requested for a view with no warps."""


class TooFewKernels(DataError):
    """The corpus is too small to split into train and validation."""


class SingleCluster(DataError):
    """A silhouette score needs at least two distinct clusters."""


class MissingMetric(DataError):
    """A metric required for reconstruction is absent from the table."""


class ZeroFull(DataError):
    """A relative error against a zero-valued full metric is undefined."""


class ZeroSampledTime(DataError):
    """Speedup is undefined when the sampled simulation time is zero."""
