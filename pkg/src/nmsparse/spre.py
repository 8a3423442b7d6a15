"""Two-branch sparse convolution blocks with a spatially selective extra branch.

An n:m mask removes the same fraction of weights at every kernel offset, which
flattens the spatial distribution of the surviving weights.  The block here
trains a second masked branch on exactly those kernel offsets where a free
(unstructured) mask of the same overall sparsity would have kept *more*
weights than n/m allows, restoring some of that lost spatial variability.
The extra branch mask is always a subset of the main mask, which is what makes
the two branches mergeable into one convolution after training.

Selection is done with integer arithmetic: offset (u, v) is selected when

    m * survivors_uv(b_u) > n * c_out * c_in

which is exactly "spatial sparsity of b_u at (u, v) is strictly below 1 - n/m"
without any floating-point division.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, MaskConstraintError, MissingCacheError
from .nn.batchnorm import BatchNormCache, BatchNormParams, batchnorm_backward, batchnorm_forward
from .nn.conv import (
    ConvSpec,
    LoweredInput,
    conv2d_backward_from_lowered,
    conv2d_from_lowered,
    lower_input,
)
from .sparsity import NMPattern, magnitude_mask, nm_project, require_nm
from .tensors import FeatureMap, Mask4, Tensor4, apply_mask, subset_of


class SpReVariant(str, enum.Enum):
    """Which kernel offsets receive the extra branch."""

    SPRE = "spre"        # offsets where a free mask keeps more than n/m
    SAME = "same"        # every offset (extra mask equals the main mask)
    INVERSE = "inverse"  # offsets where a free mask keeps less than n/m
    NONE = "none"        # no extra branch


def build_spre_mask(b: Mask4, b_u: Mask4, pattern: NMPattern) -> Mask4:
    """Extra-branch mask: copy b at offsets where b_u is denser than n/m.

    At each kernel offset (u, v) the unstructured reference mask ``b_u`` either
    kept strictly more than an n/m fraction of the (c_out, c_in) entries or it
    did not.  Where it did, the output copies ``b``; everywhere else it is
    zero.  Offsets exactly at n/m density are not selected.
    """
    return _selective_mask(b, b_u, pattern, invert=False)


def build_variant_mask(b: Mask4, b_u: Mask4, pattern: NMPattern, variant: SpReVariant) -> Mask4:
    """Extra-branch mask for any variant; always a subset of ``b``."""
    if variant == SpReVariant.NONE:
        return Mask4.zeros(b.shape)
    if variant == SpReVariant.SAME:
        return Mask4(b.data.copy())
    if variant == SpReVariant.SPRE:
        return _selective_mask(b, b_u, pattern, invert=False)
    if variant == SpReVariant.INVERSE:
        return _selective_mask(b, b_u, pattern, invert=True)
    raise ConfigError(f"unknown variant {variant!r}")


def _selective_mask(b: Mask4, b_u: Mask4, pattern: NMPattern, invert: bool) -> Mask4:
    if b.shape != b_u.shape:
        raise MaskConstraintError(
            f"mask shapes {b.shape} and {b_u.shape} do not match"
        )
    c = b.c_out * b.c_in
    survivors = b_u.data.sum(axis=(0, 1), dtype=np.int64)  # (k_h, k_w)
    if invert:
        selected = pattern.m * survivors < pattern.n * c
    else:
        selected = pattern.m * survivors > pattern.n * c
    return Mask4(b.data * selected.astype(np.uint8)[None, None, :, :])


@dataclass
class SpReBlock:
    """One conv -> BN cell in two-branch form.

    The main branch applies the n:m mask ``b_main`` to ``w_main``; the extra
    branch applies ``b_extra`` (a subset of ``b_main``) to its own weights
    ``w_extra``.  Each branch has its own batch norm and the outputs are added.
    1x1 kernels carry no spatial structure to re-balance, so they are always
    forced to the no-extra-branch variant.
    """

    name: str
    w_main: Tensor4
    b_main: Mask4
    w_extra: Tensor4
    b_extra: Mask4
    bn_main: BatchNormParams
    bn_extra: BatchNormParams
    pattern: NMPattern
    spec: ConvSpec
    variant: SpReVariant = SpReVariant.SPRE
    refresh_period: int = 1
    masks_frozen: bool = False
    _cache: "SpReCache | None" = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.variant = SpReVariant(self.variant)
        if self.w_main.k_h == 1 and self.w_main.k_w == 1:
            self.variant = SpReVariant.NONE
        if self.variant == SpReVariant.NONE:
            self.b_extra = Mask4.zeros(self.b_main.shape)
        if self.refresh_period < 1:
            raise ConfigError(f"refresh_period must be >= 1, got {self.refresh_period}")
        for nm_, t in (("w_extra", self.w_extra), ("b_main", self.b_main), ("b_extra", self.b_extra)):
            if t.shape != self.w_main.shape:
                raise MaskConstraintError(
                    f"block {self.name!r}: {nm_} shape {t.shape} does not match w_main {self.w_main.shape}"
                )
        require_nm(self.b_main, self.pattern, self.name)
        if not subset_of(self.b_extra, self.b_main):
            raise MaskConstraintError(
                f"block {self.name!r}: extra-branch mask is not a subset of the main mask"
            )
        if self.bn_main.channels != self.w_main.c_out or self.bn_extra.channels != self.w_main.c_out:
            raise MaskConstraintError(
                f"block {self.name!r}: batch norm channel count does not match c_out={self.w_main.c_out}"
            )

    @classmethod
    def from_weights(
        cls,
        name: str,
        w_main: Tensor4,
        pattern: NMPattern,
        spec: ConvSpec,
        variant: SpReVariant = SpReVariant.SPRE,
        refresh_period: int = 1,
        rng: np.random.Generator | None = None,
        extra_scale: float = 1e-2,
        masks_frozen: bool = False,
    ) -> "SpReBlock":
        """Build a block from main-branch weights, deriving all masks.

        The extra branch starts at small random weights when ``rng`` is given
        (from-scratch training) and at zero otherwise (wrapping a pretrained
        layer).  With a 1x1 kernel or the no-extra variant, no random numbers
        are drawn at all.
        """
        variant = SpReVariant(variant)
        if w_main.k_h == 1 and w_main.k_w == 1:
            variant = SpReVariant.NONE
        b_main = nm_project(w_main, pattern, name)
        b_u = magnitude_mask(w_main, pattern.sparsity)
        b_extra = build_variant_mask(b_main, b_u, pattern, variant)
        if rng is not None and variant != SpReVariant.NONE:
            w_extra = Tensor4(
                (rng.standard_normal(w_main.shape) * extra_scale).astype(w_main.dtype)
            )
        else:
            w_extra = Tensor4.zeros(w_main.shape, dtype=w_main.dtype)
        return cls(
            name=name,
            w_main=w_main,
            b_main=b_main,
            w_extra=w_extra,
            b_extra=b_extra,
            bn_main=BatchNormParams.fresh(w_main.c_out, dtype=w_main.dtype),
            bn_extra=BatchNormParams.fresh(w_main.c_out, dtype=w_main.dtype),
            pattern=pattern,
            spec=spec,
            variant=variant,
            refresh_period=refresh_period,
            masks_frozen=masks_frozen,
        )

    @property
    def has_extra(self) -> bool:
        return self.variant != SpReVariant.NONE

    def astype(self, dtype) -> "SpReBlock":
        return SpReBlock(
            name=self.name,
            w_main=self.w_main.astype(dtype),
            b_main=Mask4(self.b_main.data.copy()),
            w_extra=self.w_extra.astype(dtype),
            b_extra=Mask4(self.b_extra.data.copy()),
            bn_main=self.bn_main.astype(dtype),
            bn_extra=self.bn_extra.astype(dtype),
            pattern=self.pattern,
            spec=self.spec,
            variant=self.variant,
            refresh_period=self.refresh_period,
            masks_frozen=self.masks_frozen,
        )


@dataclass
class _BranchCache:
    w_eff: Tensor4
    conv_out: FeatureMap
    bn_cache: BatchNormCache


@dataclass
class SpReCache:
    x: FeatureMap
    lowered: LoweredInput
    main: _BranchCache
    extra: "_BranchCache | None"


def spre_forward(block: SpReBlock, x: FeatureMap, mode: str) -> FeatureMap:
    """Two-branch forward: BN(conv(b_main * w_main)) + BN(conv(b_extra * w_extra)).

    Both branches convolve the same input, so the im2col lowering is computed
    once and shared.  Train mode stashes the per-branch activations on the
    block so that :func:`spre_backward_ste` can run without recomputing the
    forward.
    """
    k = block.w_main
    lowered = lower_input(x, k.k_h, k.k_w, block.spec.stride, block.spec.padding)
    w_eff_main = apply_mask(block.w_main, block.b_main)
    s_main = conv2d_from_lowered(w_eff_main, block.spec, lowered)
    y_main, bn_cache_main = batchnorm_forward(block.bn_main, s_main, mode)

    if not block.has_extra:
        if mode == "train":
            block._cache = SpReCache(
                x=x, lowered=lowered, main=_BranchCache(w_eff_main, s_main, bn_cache_main), extra=None
            )
        return y_main

    w_eff_extra = apply_mask(block.w_extra, block.b_extra)
    s_extra = conv2d_from_lowered(w_eff_extra, block.spec, lowered)
    y_extra, bn_cache_extra = batchnorm_forward(block.bn_extra, s_extra, mode)
    if mode == "train":
        block._cache = SpReCache(
            x=x,
            lowered=lowered,
            main=_BranchCache(w_eff_main, s_main, bn_cache_main),
            extra=_BranchCache(w_eff_extra, s_extra, bn_cache_extra),
        )
    return FeatureMap(y_main.data + y_extra.data)


def spre_backward_ste(
    block: SpReBlock, x: FeatureMap, grad_out: FeatureMap, ste_decay: float = 0.0
) -> dict[str, np.ndarray]:
    """Straight-through gradients for a train-mode two-branch forward.

    The main-branch weight gradient passes straight through the mask and adds
    a decay pull on the pruned coordinates:

        grad_w_main = b_main * g_conv + ste_decay * (1 - b_main) * w_main

    so with ``ste_decay`` zero, pruned weights receive no gradient at all, and
    with a zero upstream gradient the pruned coordinates still feel exactly
    ``ste_decay * w``.  The extra branch gets plain masked gradients.  Keys of
    the returned dict: ``w_main``, ``bn_main.gamma``, ``bn_main.beta``, ``x``,
    plus ``w_extra``, ``bn_extra.gamma``, ``bn_extra.beta`` when the extra
    branch exists.
    """
    cache = block._cache
    if cache is None:
        raise MissingCacheError(
            f"block {block.name!r}: backward requires a preceding train-mode forward"
        )
    if cache.x.shape != x.shape:
        raise MissingCacheError(
            f"block {block.name!r}: cached forward saw input shape {cache.x.shape}, "
            f"backward got {x.shape}"
        )

    bn_g = batchnorm_backward(block.bn_main, cache.main.conv_out, grad_out, cache.main.bn_cache)
    gw, _, gx = conv2d_backward_from_lowered(
        cache.main.w_eff, block.spec, cache.lowered, FeatureMap(bn_g["x"])
    )
    b = block.b_main.data
    grad_w_main = b * gw.data + ste_decay * (1 - b) * block.w_main.data
    grads: dict[str, np.ndarray] = {
        "w_main": grad_w_main.astype(block.w_main.dtype),
        "bn_main.gamma": bn_g["gamma"],
        "bn_main.beta": bn_g["beta"],
    }
    grad_x = gx.data

    if block.has_extra:
        if cache.extra is None:
            raise MissingCacheError(f"block {block.name!r}: cache is missing the extra branch")
        bn_ge = batchnorm_backward(block.bn_extra, cache.extra.conv_out, grad_out, cache.extra.bn_cache)
        gwe, _, gxe = conv2d_backward_from_lowered(
            cache.extra.w_eff, block.spec, cache.lowered, FeatureMap(bn_ge["x"])
        )
        grads["w_extra"] = (block.b_extra.data * gwe.data).astype(block.w_extra.dtype)
        grads["bn_extra.gamma"] = bn_ge["gamma"]
        grads["bn_extra.beta"] = bn_ge["beta"]
        grad_x = grad_x + gxe.data

    grads["x"] = grad_x
    return grads


def refresh_masks(block: SpReBlock, step: int) -> SpReBlock:
    """Recompute both masks from the current weights when the step is due.

    Runs when ``step`` is a multiple of the block's refresh period and the
    masks are not frozen.  The main mask is re-projected onto the n:m
    constraint, the unstructured reference mask is rebuilt at the matching
    overall sparsity, and the extra mask is rebuilt for the block's variant.
    Refreshing twice without touching the weights is a no-op.
    """
    if block.masks_frozen or step % block.refresh_period != 0:
        return block
    block.b_main = nm_project(block.w_main, block.pattern, block.name)
    b_u = magnitude_mask(block.w_main, block.pattern.sparsity)
    block.b_extra = build_variant_mask(block.b_main, b_u, block.pattern, block.variant)
    return block
