"""Exception types shared across the pipeline."""


class SaclocError(Exception):
    """Base class for all errors raised by this package."""


# dataset ---------------------------------------------------------------

class MissingColumn(SaclocError):
    """A required CSV column is absent."""


class MalformedRow(SaclocError):
    """A CSV data row could not be parsed; carries the 1-based row index."""

    def __init__(self, row_index: int, message: str):
        self.row_index = row_index
        super().__init__(f"row {row_index}: {message}")


class EmptyFile(SaclocError):
    """The input file contained no data rows."""


class EmptyInput(SaclocError):
    """An operation received an empty collection."""


# autodiff --------------------------------------------------------------

class ShapeMismatch(SaclocError):
    """Tensor shapes do not conform for the requested primitive."""


class NonScalarLoss(SaclocError):
    """backward() was called on a tensor that is not a scalar."""


class StepOutOfRange(SaclocError):
    """Schedule queried outside [0, total_steps]."""


# gtmodel ---------------------------------------------------------------

class EmptyNeighborhood(SaclocError):
    """Attention requested for a node with no neighbors."""


class DimensionMismatch(SaclocError):
    """Graph dimensions do not match the model's expectations."""


class EmptyBatch(SaclocError):
    """Loss requested over an empty batch."""


class TrainingDiverged(SaclocError):
    """Training produced a non-finite loss; carries the epoch index."""

    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"non-finite loss at epoch {epoch}")


# regions ---------------------------------------------------------------

class TooFewPoints(SaclocError):
    """Fewer distinct points than requested clusters."""


# conformal -------------------------------------------------------------

class EmptyCalibration(SaclocError):
    """Calibration requested with no calibration samples."""


# evalreport ------------------------------------------------------------

class IoError(SaclocError):
    """A report file could not be written."""


# cli -------------------------------------------------------------------

class ConfigError(SaclocError):
    """The run configuration is missing or invalid."""


class MissingArtifact(SaclocError):
    """A prerequisite artifact (checkpoint, calibration file) is absent."""
