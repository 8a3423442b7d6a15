"""Folding a two-branch block back into one sparse convolution.

Batch norm in eval mode is an affine map per output channel, so each branch
collapses to a rescaled convolution plus a bias.  Because the extra-branch
mask is a subset of the main mask, the sum of the two collapsed convolutions
keeps the main branch's n:m support, and the whole block becomes a single
n:m-sparse convolution with a bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MergeError
from .nn.batchnorm import BatchNormParams
from .nn.conv import ConvSpec, conv2d_forward
from .sparsity import NMPattern, check_nm
from .spre import SpReBlock, spre_forward
from .tensors import FeatureMap, Mask4, Tensor4, apply_mask, subset_of


@dataclass
class MergedConv:
    """Single-convolution equivalent of a two-branch block."""

    name: str
    w_bar: Tensor4
    bias_bar: np.ndarray
    mask: Mask4
    pattern: NMPattern
    spec: ConvSpec

    def __post_init__(self):
        self.bias_bar = np.asarray(self.bias_bar)
        if self.bias_bar.shape != (self.w_bar.c_out,):
            raise MergeError(
                f"merged bias has shape {self.bias_bar.shape}, expected ({self.w_bar.c_out},)"
            )

    def astype(self, dtype) -> "MergedConv":
        return MergedConv(
            name=self.name,
            w_bar=self.w_bar.astype(dtype),
            bias_bar=self.bias_bar.astype(dtype),
            mask=Mask4(self.mask.data.copy()),
            pattern=self.pattern,
            spec=self.spec,
        )


def fuse_bn(w: Tensor4, spec: ConvSpec, bn: BatchNormParams) -> tuple[Tensor4, np.ndarray]:
    """Fold an eval-mode batch norm into the preceding convolution.

    Returns ``(w_fused, bias_fused)`` with

        s = gamma / sqrt(running_var + eps)
        w_fused = s * w            (per output channel)
        bias_fused = beta - s * running_mean  [+ s * conv_bias]

    Scaling whole output channels cannot create new nonzeros, so the zero
    pattern of ``w`` is preserved.
    """
    if bn.channels != w.c_out:
        raise MergeError(
            f"batch norm over {bn.channels} channels cannot fuse into conv with c_out={w.c_out}"
        )
    if not bn.initialized:
        raise MergeError("cannot fuse a batch norm whose running stats have never been set")
    s = bn.gamma / np.sqrt(bn.running_var + bn.eps)
    w_fused = Tensor4(w.data * s.reshape(-1, 1, 1, 1))
    bias = bn.beta - s * bn.running_mean
    if spec.bias is not None:
        bias = bias + s * spec.bias
    return w_fused, bias.astype(w_fused.dtype)


def merge_branches(block: SpReBlock) -> MergedConv:
    """Collapse a two-branch block into one n:m-sparse convolution with bias.

    Each branch is BN-fused independently and the results are added.  The
    merge refuses to run when the extra mask is not a subset of the main mask
    (the sum would then leave the n:m support) or when a participating batch
    norm has never seen data.
    """
    if not subset_of(block.b_extra, block.b_main):
        raise MergeError(
            f"block {block.name!r}: extra-branch mask is not a subset of the main mask; "
            "merging would break the n:m support"
        )
    w_main, bias = fuse_bn(apply_mask(block.w_main, block.b_main), block.spec, block.bn_main)
    w_bar = w_main.data
    if block.has_extra:
        w_extra, bias_extra = fuse_bn(
            apply_mask(block.w_extra, block.b_extra), block.spec, block.bn_extra
        )
        w_bar = w_bar + w_extra.data
        bias = bias + bias_extra
    mask = Mask4(block.b_main.data.copy())
    if not check_nm(mask, block.pattern):
        raise MergeError(f"block {block.name!r}: main mask violates the {block.pattern} constraint")
    return MergedConv(
        name=block.name,
        w_bar=Tensor4(w_bar),
        bias_bar=bias,
        mask=mask,
        pattern=block.pattern,
        spec=ConvSpec(stride=block.spec.stride, padding=block.spec.padding),
    )


def merged_forward(merged: MergedConv, x: FeatureMap) -> FeatureMap:
    """Run the merged convolution (mask applied, bias added)."""
    spec = ConvSpec(stride=merged.spec.stride, padding=merged.spec.padding, bias=merged.bias_bar)
    return conv2d_forward(apply_mask(merged.w_bar, merged.mask), spec, x)


@dataclass
class EquivalenceReport:
    """Outcome of comparing a two-branch block against its merged form."""

    trials: int
    max_abs_diff: float
    tolerance: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "max_abs_diff": self.max_abs_diff,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def verify_equivalence(
    block: SpReBlock,
    merged: MergedConv,
    trials: int = 100,
    tolerance: float = 1e-10,
    dtype=np.float64,
    seed: int = 0,
    input_hw: tuple[int, int] = (8, 8),
    batch: int = 2,
) -> EquivalenceReport:
    """Feed random inputs through both forms and report the worst deviation.

    The block runs in eval mode.  Both forms are cast to ``dtype`` before the
    comparison.  Zero trials pass vacuously with a max deviation of 0.
    """
    block = block.astype(dtype)
    merged = merged.astype(dtype)
    rng = np.random.default_rng(seed)
    h, w = input_hw
    max_diff = 0.0
    for _ in range(trials):
        x = FeatureMap(rng.uniform(-1.0, 1.0, size=(batch, block.w_main.c_in, h, w)).astype(dtype))
        y_block = spre_forward(block, x, "eval")
        y_merged = merged_forward(merged, x)
        diff = float(np.max(np.abs(y_block.data - y_merged.data)))
        max_diff = max(max_diff, diff)
    return EquivalenceReport(
        trials=trials,
        max_abs_diff=max_diff,
        tolerance=tolerance,
        passed=max_diff <= tolerance,
    )
