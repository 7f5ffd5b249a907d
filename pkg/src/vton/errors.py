"""Exception types shared across the pipeline."""


class VtonError(Exception):
    """Base class for all pipeline errors."""


class DatasetLayoutError(VtonError):
    """Dataset root is missing a required subdirectory."""


class UnpairedSampleError(VtonError):
    """A sample id is present in one subdirectory but not another."""


class SchemaError(VtonError):
    """Label schema is missing a required semantic group."""


class ShapeError(VtonError):
    """Tensor shapes are incompatible with the operation."""


class MaskDomainError(VtonError):
    """A mask operand contains values outside {0, 1}."""


class MaskSamplingError(VtonError):
    """Random mask generation could not satisfy the coverage bounds."""

    def __init__(self, message, seed=None):
        super().__init__(message)
        self.seed = seed


class SingularWarpError(VtonError):
    """TPS control points are degenerate; the warp system has no solution."""


class NumericalError(VtonError):
    """Non-finite values encountered where finite ones are required."""


class LossAssemblyError(VtonError):
    """A required loss term is missing from a weighted combination."""


class CheckpointMismatchError(VtonError):
    """Checkpoint stage tag or parameter inventory does not match."""


class TransferError(VtonError):
    """Parameter transfer between networks failed structurally."""

    def __init__(self, message, names=()):
        super().__init__(message)
        self.names = list(names)


class ConfigError(VtonError):
    """Configuration file is invalid."""


class DivergenceError(VtonError):
    """Training loss became non-finite."""

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


class LabelDomainError(VtonError):
    """A label map contains ids outside the schema range."""


class EvaluationError(VtonError):
    """Evaluation harness input is inconsistent."""
