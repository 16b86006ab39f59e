"""Exception types shared across the package."""


class VoxformerError(Exception):
    """Base class for all package-specific errors."""


class ShapeMismatch(VoxformerError):
    pass


class NonFinite(VoxformerError):
    pass


class NotScalar(VoxformerError):
    pass


class TapeConsumed(VoxformerError):
    pass


class NotRecorded(VoxformerError):
    """Backward was requested for a tensor that no tape recorded."""


class SequenceTooLong(VoxformerError):
    pass


class BadMagic(VoxformerError):
    pass


class VersionUnsupported(VoxformerError):
    pass


class TruncatedFile(VoxformerError):
    pass


class ChecksumMismatch(VoxformerError):
    pass


class DegenerateScan(VoxformerError):
    pass


class InvalidSpec(VoxformerError):
    pass


class InvalidFractions(VoxformerError):
    pass


class ZeroVariance(VoxformerError):
    pass


class WindowTooLong(VoxformerError):
    pass


class EmptyAnatomy(VoxformerError):
    pass


class ConfigMismatch(VoxformerError):
    pass


class MissingLabels(VoxformerError):
    pass


class EmptyClass(VoxformerError):
    pass


class SingleClass(VoxformerError):
    pass


class ZeroDenominator(VoxformerError):
    pass
