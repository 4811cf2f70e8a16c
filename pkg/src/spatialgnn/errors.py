"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: usage problems exit 1, data
problems exit 2, numeric failures (NaN/Inf anywhere in the pipeline) exit 3.
"""


class SpatialGnnError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(SpatialGnnError):
    """An array did not have the rank/shape an operation requires."""


class AutodiffError(SpatialGnnError):
    """Tape misuse: double backward, detached loss, non-scalar loss."""


class GraphError(SpatialGnnError):
    """A graph violated its structural contract (bad edges, label range...)."""


class DataError(SpatialGnnError):
    """Missing, malformed or inconsistent input data (exit code 2)."""


class NumericError(SpatialGnnError):
    """NaN/Inf detected in values or gradients (exit code 3)."""


class StageError(SpatialGnnError):
    """A model stage failed; carries the stage name for diagnostics."""

    def __init__(self, stage: str, original: Exception):
        super().__init__(f"stage '{stage}' failed: {original}")
        self.stage = stage
        self.original = original
