"""2-d convolution (cross-correlation convention) with hand-written gradients.

Two forward routes are provided: a readable direct route that walks the output
grid, and an im2col route that lowers the convolution to one matrix product.
They must produce the same values; tests hold them to 1e-6 at 32-bit.

The lowering of an input depends only on the input and the conv geometry, not
on the weights, so it can be shared: between the forward and backward of one
layer, and between two branches convolving the same input.  ``lower_input``
exposes it as a first-class object; the plain ``conv2d_forward`` /
``conv2d_backward`` pair wraps it for callers that do not care.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigError, ShapeMismatchError
from ..tensors import FeatureMap, Tensor4


@dataclass
class ConvSpec:
    """Stride/padding hyper-parameters plus an optional per-channel bias."""

    stride: int = 1
    padding: int = 0
    bias: np.ndarray | None = None

    def __post_init__(self):
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ConfigError(f"padding must be >= 0, got {self.padding}")
        if self.bias is not None:
            self.bias = np.asarray(self.bias)
            if self.bias.ndim != 1:
                raise ShapeMismatchError(
                    f"bias must be 1-d (one value per output channel), got shape {self.bias.shape}"
                )


def output_hw(h: int, w: int, k_h: int, k_w: int, stride: int, padding: int) -> tuple[int, int]:
    """Spatial size of the convolution output."""
    out_h = (h + 2 * padding - k_h) // stride + 1
    out_w = (w + 2 * padding - k_w) // stride + 1
    return out_h, out_w


def _check_forward_shapes(w: Tensor4, spec: ConvSpec, x: FeatureMap) -> tuple[int, int]:
    if x.c != w.c_in:
        raise ShapeMismatchError(
            f"conv2d: input has {x.c} channels but kernel of shape {w.shape} expects {w.c_in}"
        )
    if spec.bias is not None and spec.bias.shape[0] != w.c_out:
        raise ShapeMismatchError(
            f"conv2d: bias has {spec.bias.shape[0]} entries but kernel has {w.c_out} output channels"
        )
    out_h, out_w = output_hw(x.h, x.w, w.k_h, w.k_w, spec.stride, spec.padding)
    if out_h < 1 or out_w < 1:
        raise ShapeMismatchError(
            f"conv2d: kernel {w.shape} with stride={spec.stride} padding={spec.padding} "
            f"produces empty output ({out_h}, {out_w}) on input of shape {x.shape}"
        )
    return out_h, out_w


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


@dataclass
class LoweredInput:
    """im2col form of one padded input batch for a fixed conv geometry.

    ``cols`` has shape (n, c*k_h*k_w, out_h*out_w); the remaining fields are
    the geometry needed to fold gradients back onto the input grid.
    """

    cols: np.ndarray
    n: int
    padded_shape: tuple[int, ...]
    k_h: int
    k_w: int
    stride: int
    padding: int
    out_h: int
    out_w: int


def lower_input(x: FeatureMap, k_h: int, k_w: int, stride: int, padding: int) -> LoweredInput:
    """Build the column matrix for ``x`` under the given conv geometry."""
    out_h, out_w = output_hw(x.h, x.w, k_h, k_w, stride, padding)
    if out_h < 1 or out_w < 1:
        raise ShapeMismatchError(
            f"conv2d: kernel ({k_h}, {k_w}) with stride={stride} padding={padding} "
            f"produces empty output ({out_h}, {out_w}) on input of shape {x.shape}"
        )
    xp = _pad(x.data, padding)
    n, c = xp.shape[:2]
    # (n, c, oh_full, ow_full, k_h, k_w) view; subsample by stride, then order
    # axes as (n, c, k_h, k_w, oh, ow) so one reshape yields the column matrix.
    windows = sliding_window_view(xp, (k_h, k_w), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = windows.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * k_h * k_w, out_h * out_w)
    return LoweredInput(
        cols=cols,
        n=n,
        padded_shape=xp.shape,
        k_h=k_h,
        k_w=k_w,
        stride=stride,
        padding=padding,
        out_h=out_h,
        out_w=out_w,
    )


def conv2d_from_lowered(w: Tensor4, spec: ConvSpec, lowered: LoweredInput) -> FeatureMap:
    """Forward pass given a precomputed lowering of the input."""
    wmat = w.data.reshape(w.c_out, -1)
    if wmat.shape[1] != lowered.cols.shape[1]:
        raise ShapeMismatchError(
            f"conv2d: kernel {w.shape} does not match lowered input with "
            f"{lowered.cols.shape[1]} values per window"
        )
    out = np.matmul(wmat, lowered.cols).reshape(lowered.n, w.c_out, lowered.out_h, lowered.out_w)
    if spec.bias is not None:
        out = out + spec.bias.reshape(1, -1, 1, 1)
    return FeatureMap(out)


def conv2d_backward_from_lowered(
    w: Tensor4, spec: ConvSpec, lowered: LoweredInput, grad_out: FeatureMap
) -> tuple[Tensor4, np.ndarray | None, FeatureMap]:
    """Gradients given the lowering that produced the forward output."""
    expected = (lowered.n, w.c_out, lowered.out_h, lowered.out_w)
    if grad_out.shape != expected:
        raise ShapeMismatchError(
            f"conv2d backward: upstream gradient has shape {grad_out.shape}, expected {expected}"
        )
    g = grad_out.data.reshape(lowered.n, w.c_out, lowered.out_h * lowered.out_w)
    # contract over (sample, window) in one pass instead of a batched matmul
    grad_w = np.tensordot(g, lowered.cols, axes=([0, 2], [0, 2])).reshape(w.shape)
    wmat = w.data.reshape(w.c_out, -1)
    grad_cols = np.matmul(wmat.T, g)
    grad_x = _col2im(grad_cols, lowered)
    grad_bias = grad_out.data.sum(axis=(0, 2, 3)) if spec.bias is not None else None
    return Tensor4(grad_w), grad_bias, FeatureMap(grad_x)


def _col2im(grad_cols: np.ndarray, lo: LoweredInput) -> np.ndarray:
    """Scatter-add column gradients back onto the (unpadded) input grid."""
    n, c = lo.padded_shape[:2]
    g6 = grad_cols.reshape(n, c, lo.k_h, lo.k_w, lo.out_h, lo.out_w)
    gx = np.zeros(lo.padded_shape, dtype=grad_cols.dtype)
    s = lo.stride
    for u in range(lo.k_h):
        for v in range(lo.k_w):
            gx[:, :, u : u + s * lo.out_h : s, v : v + s * lo.out_w : s] += g6[:, :, u, v]
    if lo.padding:
        p = lo.padding
        gx = gx[:, :, p:-p, p:-p]
    return gx


def conv2d_forward(w: Tensor4, spec: ConvSpec, x: FeatureMap, method: str = "im2col") -> FeatureMap:
    """Cross-correlate ``x`` with the kernel bank ``w``.

    Args:
        w: kernel bank (c_out, c_in, k_h, k_w).
        spec: stride/padding/bias.
        x: input batch (n, c_in, h, w).
        method: "im2col" (default) or "direct"; both give the same values.
    """
    if method not in ("im2col", "direct"):
        raise ConfigError(f"unknown conv method {method!r}")
    out_h, out_w = _check_forward_shapes(w, spec, x)
    if method == "direct":
        xp = _pad(x.data, spec.padding)
        out = _forward_direct(w.data, xp, spec.stride, out_h, out_w)
        if spec.bias is not None:
            out = out + spec.bias.reshape(1, -1, 1, 1)
        return FeatureMap(out)
    lowered = lower_input(x, w.k_h, w.k_w, spec.stride, spec.padding)
    return conv2d_from_lowered(w, spec, lowered)


def _forward_direct(w: np.ndarray, xp: np.ndarray, stride: int, out_h: int, out_w: int) -> np.ndarray:
    n = xp.shape[0]
    c_out, _, k_h, k_w = w.shape
    out = np.empty((n, c_out, out_h, out_w), dtype=np.result_type(w.dtype, xp.dtype))
    for i in range(out_h):
        hs = i * stride
        for j in range(out_w):
            ws = j * stride
            patch = xp[:, :, hs : hs + k_h, ws : ws + k_w]
            # sum over (c_in, k_h, k_w) for every (sample, out channel) pair
            out[:, :, i, j] = np.tensordot(patch, w, axes=([1, 2, 3], [1, 2, 3]))
    return out


def conv2d_backward(
    w: Tensor4, spec: ConvSpec, x: FeatureMap, grad_out: FeatureMap
) -> tuple[Tensor4, np.ndarray | None, FeatureMap]:
    """Gradients of a conv2d_forward call.

    Returns ``(grad_w, grad_bias, grad_x)`` where ``grad_bias`` is None when
    the spec carries no bias.
    """
    _check_forward_shapes(w, spec, x)
    lowered = lower_input(x, w.k_h, w.k_w, spec.stride, spec.padding)
    return conv2d_backward_from_lowered(w, spec, lowered, grad_out)
