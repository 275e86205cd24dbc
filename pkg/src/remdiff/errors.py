"""Exception types shared across the toolkit."""


class RemdiffError(Exception):
    """Base class for all toolkit errors."""


class DegenerateRange(RemdiffError):
    """Value range has max == min, so the affine map to [-1, 1] is undefined."""


class MissingMetadata(RemdiffError):
    """A metadata row references an image that does not exist (or vice versa)."""


class CorruptImage(RemdiffError):
    """An image file exists but cannot be decoded."""


class DimensionMismatch(RemdiffError):
    """A map's pixel dimensions differ from the dataset manifest."""


class TxInsideBuilding(RemdiffError):
    """A transmitter coordinate falls inside (or too close to) a building."""


class InvalidRange(RemdiffError):
    """Schedule parameters outside their admissible interval."""


class StepOutOfRange(RemdiffError):
    """Diffusion step index outside [1, T] (or [0, T] where alpha_bar(0) is defined)."""


class ShapeMismatch(RemdiffError):
    """Tensor shapes incompatible with the denoiser configuration."""


class NonFiniteLoss(RemdiffError):
    """Training loss became NaN/Inf; carries the offending batch ids."""

    def __init__(self, message: str, batch_ids: list[str] | None = None):
        super().__init__(message)
        self.batch_ids = list(batch_ids or [])


class DiskFull(RemdiffError):
    """Checkpoint or record write failed for lack of space."""


class DuplicateId(RemdiffError):
    """A record id already exists in the target store."""


class IncompatibleCheckpoint(RemdiffError):
    """Checkpoint manifest does not match the requested geometry or schedule."""


class IndexOutOfRange(RemdiffError):
    """Slice index outside the grid bounds."""


class FewerThanTwoSamples(RemdiffError):
    """Ensemble statistics need at least two samples."""


class ConfigError(RemdiffError):
    """Invalid or unknown configuration key/value."""
