"""n:m structured sparsity toolkit with two-branch spatial re-parameterization.

The package is organized around a small dependency chain:

``tensors`` -> ``nn`` -> ``sparsity`` -> ``spre`` -> ``reparam`` ->
``model``/``training`` -> ``workflows`` -> ``service``/``cli``.
"""

from .errors import (
    BadMagicError,
    CheckpointError,
    ConfigError,
    DatasetError,
    DuplicateNameError,
    MaskConstraintError,
    MergeError,
    MissingCacheError,
    NMSparseError,
    ShapeMismatchError,
    TruncatedCheckpointError,
    UnsupportedVersionError,
)
from .reparam import EquivalenceReport, MergedConv, fuse_bn, merge_branches, verify_equivalence
from .sparsity import (
    NMPattern,
    SparsityProfile,
    magnitude_mask,
    nm_project,
    spatial_sparsity,
    uniform_spatial_mask,
)
from .spre import (
    SpReBlock,
    SpReVariant,
    build_spre_mask,
    build_variant_mask,
    refresh_masks,
    spre_backward_ste,
    spre_forward,
)
from .tensors import FeatureMap, Mask4, Tensor4, apply_mask, count_nonzero_mask, subset_of

__version__ = "0.1.0"

__all__ = [
    "BadMagicError",
    "CheckpointError",
    "ConfigError",
    "DatasetError",
    "DuplicateNameError",
    "EquivalenceReport",
    "FeatureMap",
    "Mask4",
    "MaskConstraintError",
    "MergedConv",
    "MergeError",
    "MissingCacheError",
    "NMPattern",
    "NMSparseError",
    "ShapeMismatchError",
    "SparsityProfile",
    "SpReBlock",
    "SpReVariant",
    "Tensor4",
    "TruncatedCheckpointError",
    "UnsupportedVersionError",
    "apply_mask",
    "build_spre_mask",
    "build_variant_mask",
    "count_nonzero_mask",
    "fuse_bn",
    "magnitude_mask",
    "merge_branches",
    "nm_project",
    "refresh_masks",
    "spatial_sparsity",
    "spre_backward_ste",
    "spre_forward",
    "subset_of",
    "uniform_spatial_mask",
    "verify_equivalence",
]
