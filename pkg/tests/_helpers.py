"""Shared test utilities: finite-difference gradient checks and builders."""

from __future__ import annotations

import numpy as np

from nmsparse.nn import BatchNormParams, ConvSpec
from nmsparse.sparsity import NMPattern
from nmsparse.spre import SpReBlock, SpReVariant
from nmsparse.tensors import Tensor4


def central_difference(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Numerical gradient of scalar-valued ``f`` at ``x`` by central differences."""
    x = x.astype(np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst-case relative deviation between two gradient arrays."""
    num = np.abs(analytic - numeric)
    den = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
    return float((num / den).max())


def random_bn(rng: np.random.Generator, channels: int, dtype=np.float64) -> BatchNormParams:
    """Batch norm with non-trivial, valid random statistics."""
    return BatchNormParams(
        gamma=rng.uniform(0.5, 1.5, channels).astype(dtype),
        beta=rng.uniform(-0.5, 0.5, channels).astype(dtype),
        running_mean=rng.uniform(-1.0, 1.0, channels).astype(dtype),
        running_var=rng.uniform(0.2, 2.0, channels).astype(dtype),
        eps=1e-5,
    )


def random_block(
    rng: np.random.Generator,
    c_out: int = 8,
    c_in: int = 16,
    k: int = 3,
    pattern: NMPattern | None = None,
    variant: SpReVariant = SpReVariant.SPRE,
    stride: int = 1,
    padding: int = 1,
    dtype=np.float64,
) -> SpReBlock:
    """Two-branch block with trained-looking random weights and statistics."""
    pattern = pattern or NMPattern(1, 4)
    w_main = Tensor4(rng.standard_normal((c_out, c_in, k, k)).astype(dtype))
    block = SpReBlock.from_weights(
        "blk",
        w_main,
        pattern,
        ConvSpec(stride, padding),
        variant=variant,
        rng=rng,
        extra_scale=0.5,
    )
    block.bn_main = random_bn(rng, c_out, dtype)
    block.bn_extra = random_bn(rng, c_out, dtype)
    return block
