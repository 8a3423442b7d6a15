"""Mask construction: magnitude pruning, N:M projection, spatial profiles.

Deterministic tie handling is part of the contract here.  Counts derived from
a fraction use round-half-up (``floor(x + 0.5)``).  When several weights share
a magnitude at a pruning boundary, ``magnitude_mask`` prunes the one with the
lowest flat row-major index first, and ``nm_project`` keeps the one with the
lowest channel index first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, MaskConstraintError, ShapeMismatchError
from .tensors import Mask4, Tensor4


def round_half_up(x: float) -> int:
    """Round to the nearest integer with .5 going up."""
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class NMPattern:
    """An n:m constraint: n survivors in every m consecutive input channels."""

    n: int
    m: int

    def __post_init__(self):
        if not (1 <= self.n <= self.m):
            raise ConfigError(f"n:m pattern needs 1 <= n <= m, got {self.n}:{self.m}")

    @property
    def sparsity(self) -> float:
        """Fraction of weights removed: 1 - n/m."""
        return 1.0 - self.n / self.m

    def check_divides(self, c_in: int, layer_name: str = "") -> None:
        if c_in % self.m != 0:
            where = f" in layer {layer_name!r}" if layer_name else ""
            raise ConfigError(
                f"c_in={c_in}{where} is not divisible by m={self.m}; "
                f"cannot form {self.n}:{self.m} groups"
            )

    def __str__(self) -> str:
        return f"{self.n}:{self.m}"


@dataclass
class SparsityProfile:
    """Per-kernel-offset sparsity of one layer's mask: values[u, v] in [0, 1]."""

    layer_name: str
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeMismatchError(
                f"sparsity profile must be 2-d (k_h, k_w), got shape {self.values.shape}"
            )

    @property
    def k_h(self) -> int:
        return self.values.shape[0]

    @property
    def k_w(self) -> int:
        return self.values.shape[1]

    def rows(self):
        """Yield (layer, u, v, value) tuples in row-major order."""
        for u in range(self.k_h):
            for v in range(self.k_w):
                yield self.layer_name, u, v, float(self.values[u, v])


def magnitude_mask(w: Tensor4, sparsity: float) -> Mask4:
    """Unstructured mask keeping the largest-magnitude weights of the layer.

    Prunes ``round_half_up(sparsity * w.size)`` entries; ties at the boundary
    are resolved by pruning the lower flat index first.
    """
    if not 0 <= sparsity < 1:
        raise ConfigError(f"sparsity must lie in [0, 1), got {sparsity}")
    k = round_half_up(sparsity * w.size)
    mask = np.ones(w.size, dtype=np.uint8)
    if k > 0:
        order = np.argsort(np.abs(w.data.ravel()), kind="stable")
        mask[order[:k]] = 0
    return Mask4(mask.reshape(w.shape))


def nm_project(w: Tensor4, pattern: NMPattern, layer_name: str = "") -> Mask4:
    """Mask keeping the ``n`` largest-magnitude weights in every group of ``m``
    consecutive input channels, independently at each (c_out, u, v).

    Ties keep the lower channel index first.
    """
    pattern.check_divides(w.c_in, layer_name)
    groups = w.c_in // pattern.m
    a = np.abs(w.data).reshape(w.c_out, groups, pattern.m, w.k_h, w.k_w)
    # Descending magnitude; stable sort turns equal magnitudes into
    # ascending channel order, so the lowest channel index wins ties.
    order = np.argsort(-a, axis=2, kind="stable")
    keep = order[:, :, : pattern.n]
    mask = np.zeros_like(a, dtype=np.uint8)
    np.put_along_axis(mask, keep, 1, axis=2)
    return Mask4(mask.reshape(w.shape))


def check_nm(mask: Mask4, pattern: NMPattern) -> bool:
    """True when every (c_out, group, u, v) slice has exactly n survivors."""
    if mask.c_in % pattern.m != 0:
        return False
    groups = mask.c_in // pattern.m
    counts = mask.data.reshape(mask.c_out, groups, pattern.m, mask.k_h, mask.k_w).sum(axis=2)
    return bool(np.all(counts == pattern.n))


def require_nm(mask: Mask4, pattern: NMPattern, layer_name: str = "") -> None:
    """Raise when the mask does not satisfy the n:m constraint."""
    if not check_nm(mask, pattern):
        where = f" in layer {layer_name!r}" if layer_name else ""
        raise MaskConstraintError(f"mask{where} violates the {pattern} constraint")


def spatial_sparsity(mask: Mask4, layer_name: str = "") -> SparsityProfile:
    """Fraction of pruned weights at each kernel offset (u, v).

    For a mask with shape (c_out, c_in, k_h, k_w), entry (u, v) of the profile
    is ``1 - mean(mask[:, :, u, v])``.
    """
    values = 1.0 - mask.data.mean(axis=(0, 1), dtype=np.float64)
    return SparsityProfile(layer_name=layer_name, values=values)


def uniform_spatial_mask(w: Tensor4, sparsity: float) -> Mask4:
    """Unstructured mask constrained to equal density at every kernel offset.

    Each (u, v) slice independently keeps its ``round_half_up((1 - sparsity)
    * c_out * c_in)`` largest-magnitude entries, so the spatial profile is
    constant up to rounding.  Ties follow the magnitude_mask convention.
    """
    if not 0 <= sparsity < 1:
        raise ConfigError(f"sparsity must lie in [0, 1), got {sparsity}")
    c = w.c_out * w.c_in
    keep = round_half_up((1.0 - sparsity) * c)
    prune = c - keep
    mask = np.ones((c, w.k_h, w.k_w), dtype=np.uint8)
    flat = np.abs(w.data).reshape(c, w.k_h, w.k_w)
    if prune > 0:
        for u in range(w.k_h):
            for v in range(w.k_w):
                order = np.argsort(flat[:, u, v], kind="stable")
                mask[order[:prune], u, v] = 0
    return Mask4(mask.reshape(w.shape))
