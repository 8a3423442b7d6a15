"""Core tensor containers and the mask algebra used everywhere else.

Three thin wrappers around ``numpy`` arrays give the rest of the toolkit a
shared vocabulary:

* :class:`Tensor4` -- a dense convolution weight bank ``(c_out, c_in, k_h, k_w)``
* :class:`Mask4`   -- a binary tensor of the same rank with entries in {0, 1}
* :class:`FeatureMap` -- an activation batch ``(n, c, h, w)``

The wrappers validate on construction and are treated as immutable: every
operation returns a new instance instead of mutating in place.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .errors import ShapeMismatchError

FLOAT_DTYPES = (np.float32, np.float64)


def _require_float(arr: np.ndarray) -> np.ndarray:
    if arr.dtype.type not in FLOAT_DTYPES:
        arr = arr.astype(np.float64)
    return arr


class Tensor4:
    """Dense 4-d weight tensor with shape (c_out, c_in, k_h, k_w)."""

    __slots__ = ("data",)

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.ndim != 4:
            raise ShapeMismatchError(
                f"Tensor4 expects 4 axes (c_out, c_in, k_h, k_w), got shape {arr.shape}"
            )
        arr = _require_float(arr)
        if not np.isfinite(arr).all():
            raise ValueError("Tensor4 entries must all be finite")
        self.data = arr

    @classmethod
    def zeros(cls, shape: Iterable[int], dtype=np.float32) -> "Tensor4":
        return cls(np.zeros(tuple(shape), dtype=dtype))

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def c_out(self) -> int:
        return self.data.shape[0]

    @property
    def c_in(self) -> int:
        return self.data.shape[1]

    @property
    def k_h(self) -> int:
        return self.data.shape[2]

    @property
    def k_w(self) -> int:
        return self.data.shape[3]

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def astype(self, dtype) -> "Tensor4":
        return Tensor4(self.data.astype(dtype))

    def __repr__(self) -> str:
        return f"Tensor4(shape={self.shape}, dtype={self.data.dtype})"


class Mask4:
    """Binary 4-d mask; every entry is exactly 0 or 1, stored as uint8."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.asarray(data)
        if arr.ndim != 4:
            raise ShapeMismatchError(
                f"Mask4 expects 4 axes (c_out, c_in, k_h, k_w), got shape {arr.shape}"
            )
        if not ((arr == 0) | (arr == 1)).all():
            raise ValueError("Mask4 entries must all be exactly 0 or 1")
        self.data = arr.astype(np.uint8)

    @classmethod
    def ones(cls, shape: Iterable[int]) -> "Mask4":
        return cls(np.ones(tuple(shape), dtype=np.uint8))

    @classmethod
    def zeros(cls, shape: Iterable[int]) -> "Mask4":
        return cls(np.zeros(tuple(shape), dtype=np.uint8))

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def c_out(self) -> int:
        return self.data.shape[0]

    @property
    def c_in(self) -> int:
        return self.data.shape[1]

    @property
    def k_h(self) -> int:
        return self.data.shape[2]

    @property
    def k_w(self) -> int:
        return self.data.shape[3]

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Mask4(shape={self.shape}, nonzero={int(self.data.sum())})"


class FeatureMap:
    """Activation batch with shape (n, c, h, w)."""

    __slots__ = ("data",)

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.ndim != 4:
            raise ShapeMismatchError(
                f"FeatureMap expects 4 axes (n, c, h, w), got shape {arr.shape}"
            )
        arr = _require_float(arr)
        self.data = arr

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def c(self) -> int:
        return self.data.shape[1]

    @property
    def h(self) -> int:
        return self.data.shape[2]

    @property
    def w(self) -> int:
        return self.data.shape[3]

    @property
    def dtype(self):
        return self.data.dtype

    def astype(self, dtype) -> "FeatureMap":
        return FeatureMap(self.data.astype(dtype))

    def __repr__(self) -> str:
        return f"FeatureMap(shape={self.shape}, dtype={self.data.dtype})"


def _check_same_shape(a, b, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{op}: shapes {a.shape} and {b.shape} do not match")


def apply_mask(w: Tensor4, b: Mask4) -> Tensor4:
    """Elementwise product w * b; zeroes out the pruned coordinates of w."""
    _check_same_shape(w, b, "apply_mask")
    return Tensor4(w.data * b.data)


def count_nonzero_mask(b: Mask4) -> int:
    """Number of surviving (value 1) entries in the mask."""
    return int(b.data.sum())


def subset_of(a: Mask4, b: Mask4) -> bool:
    """True when every nonzero of ``a`` is also nonzero in ``b``."""
    _check_same_shape(a, b, "subset_of")
    return bool(np.all(a.data <= b.data))
