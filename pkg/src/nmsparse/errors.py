"""Exception hierarchy shared across the toolkit.

Every failure that a caller can reasonably anticipate (bad shapes, corrupt
files, illegal configs) raises a subclass of :class:`NMSparseError` so that
service and CLI layers can map them to structured error payloads.
"""


class NMSparseError(Exception):
    """Base class for all structured toolkit errors."""


class ShapeMismatchError(NMSparseError):
    """Two tensors (or a tensor and an operation) disagree about shape."""


class ConfigError(NMSparseError):
    """A configuration value is out of range or inconsistent."""


class MaskConstraintError(NMSparseError):
    """A binary mask violates the structural constraint it must satisfy."""


class MissingCacheError(NMSparseError):
    """A backward pass was requested without a matching train-mode forward."""


class MergeError(NMSparseError):
    """A two-branch block cannot be folded into a single convolution."""


class CheckpointError(NMSparseError):
    """Base class for checkpoint serialization failures."""


class BadMagicError(CheckpointError):
    """The file does not start with the expected magic bytes."""


class UnsupportedVersionError(CheckpointError):
    """The file declares a format version this reader does not understand."""


class TruncatedCheckpointError(CheckpointError):
    """The file ended before the declared payload was complete."""


class DuplicateNameError(CheckpointError):
    """Two checkpoint entries share the same name."""


class DatasetError(NMSparseError):
    """A dataset could not be generated or loaded."""
