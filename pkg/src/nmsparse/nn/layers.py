"""Pointwise / pooling / linear layers and the classification loss."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatchError
from ..tensors import FeatureMap


def relu_forward(x: FeatureMap) -> FeatureMap:
    """Elementwise max(x, 0)."""
    return FeatureMap(np.maximum(x.data, 0))


def relu_backward(x: FeatureMap, grad_out: FeatureMap) -> FeatureMap:
    """Pass gradient through where the forward input was strictly positive."""
    if grad_out.shape != x.shape:
        raise ShapeMismatchError(
            f"relu backward: gradient shape {grad_out.shape} does not match input {x.shape}"
        )
    return FeatureMap(grad_out.data * (x.data > 0))


def global_avg_pool_forward(x: FeatureMap) -> np.ndarray:
    """Average each channel plane down to one value; returns (n, c)."""
    return x.data.mean(axis=(2, 3))


def global_avg_pool_backward(grad_out: np.ndarray, x_shape: tuple[int, int, int, int]) -> FeatureMap:
    """Spread each pooled gradient uniformly over its h*w plane."""
    n, c, h, w = x_shape
    if grad_out.shape != (n, c):
        raise ShapeMismatchError(
            f"global average pool backward: gradient shape {grad_out.shape}, expected {(n, c)}"
        )
    g = np.broadcast_to(grad_out.reshape(n, c, 1, 1), x_shape) / (h * w)
    return FeatureMap(np.ascontiguousarray(g))


def linear_forward(w: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Affine map x @ w.T + b for w of shape (out, in) and x of shape (n, in)."""
    if x.shape[1] != w.shape[1]:
        raise ShapeMismatchError(
            f"linear: input of shape {x.shape} does not match weight of shape {w.shape}"
        )
    if b.shape != (w.shape[0],):
        raise ShapeMismatchError(
            f"linear: bias of shape {b.shape} does not match weight of shape {w.shape}"
        )
    return x @ w.T + b


def linear_backward(
    w: np.ndarray, x: np.ndarray, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (grad_w, grad_b, grad_x) of linear_forward."""
    if grad_out.shape != (x.shape[0], w.shape[0]):
        raise ShapeMismatchError(
            f"linear backward: gradient shape {grad_out.shape}, expected {(x.shape[0], w.shape[0])}"
        )
    grad_w = grad_out.T @ x
    grad_b = grad_out.sum(axis=0)
    grad_x = grad_out @ w
    return grad_w, grad_b, grad_x


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits.

    Uses the max-shift trick so large logits cannot overflow.
    """
    if logits.ndim != 2:
        raise ShapeMismatchError(f"logits must be 2-d (n, classes), got shape {logits.shape}")
    n = logits.shape[0]
    if labels.shape != (n,):
        raise ShapeMismatchError(
            f"labels of shape {labels.shape} do not match logits of shape {logits.shape}"
        )
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(exp.sum(axis=1, keepdims=True))
    loss = float(-log_probs[np.arange(n), labels].mean())
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, grad
