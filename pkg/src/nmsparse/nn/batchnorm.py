"""Per-channel batch normalization with running statistics.

Train mode normalizes by biased batch statistics and folds them into the
running estimates via ``running <- (1 - momentum) * running + momentum * batch``.
Eval mode normalizes by the running estimates alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, MissingCacheError, ShapeMismatchError
from ..tensors import FeatureMap


@dataclass
class BatchNormParams:
    """Learnable scale/shift plus running statistics for one channel axis.

    ``initialized`` records whether the running statistics reflect anything
    real (seen data, or values supplied explicitly by the caller); a fresh
    layer starts at False and flips on the first train-mode forward.
    """

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1
    initialized: bool = True

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma)
        self.beta = np.asarray(self.beta)
        self.running_mean = np.asarray(self.running_mean)
        self.running_var = np.asarray(self.running_var)
        c = self.gamma.shape
        for name, arr in (
            ("beta", self.beta),
            ("running_mean", self.running_mean),
            ("running_var", self.running_var),
        ):
            if arr.shape != c:
                raise ShapeMismatchError(
                    f"batch norm {name} has shape {arr.shape}, expected {c}"
                )
        if self.gamma.ndim != 1:
            raise ShapeMismatchError(
                f"batch norm parameters must be 1-d, got shape {self.gamma.shape}"
            )
        if np.any(self.running_var < 0):
            raise ConfigError("running_var entries must be non-negative")
        if not self.eps > 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if not 0 < self.momentum < 1:
            raise ConfigError(f"momentum must lie in (0, 1), got {self.momentum}")

    @classmethod
    def fresh(cls, channels: int, dtype=np.float32) -> "BatchNormParams":
        """Identity-initialized layer whose running stats have seen no data."""
        return cls(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            initialized=False,
        )

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    def astype(self, dtype) -> "BatchNormParams":
        return BatchNormParams(
            gamma=self.gamma.astype(dtype),
            beta=self.beta.astype(dtype),
            running_mean=self.running_mean.astype(dtype),
            running_var=self.running_var.astype(dtype),
            eps=self.eps,
            momentum=self.momentum,
            initialized=self.initialized,
        )


@dataclass
class BatchNormCache:
    """Batch statistics captured by a train-mode forward, needed by backward."""

    x_hat: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    inv_std: np.ndarray


def batchnorm_forward(
    p: BatchNormParams, x: FeatureMap, mode: str
) -> tuple[FeatureMap, BatchNormCache | None]:
    """Normalize ``x`` per channel; returns (output, cache) with cache None in eval."""
    if mode not in ("train", "eval"):
        raise ConfigError(f"batch norm mode must be 'train' or 'eval', got {mode!r}")
    if x.c != p.channels:
        raise ShapeMismatchError(
            f"batch norm over {p.channels} channels got input of shape {x.shape}"
        )
    gamma = p.gamma.reshape(1, -1, 1, 1)
    beta = p.beta.reshape(1, -1, 1, 1)
    if mode == "eval":
        inv_std = 1.0 / np.sqrt(p.running_var + p.eps)
        y = gamma * (x.data - p.running_mean.reshape(1, -1, 1, 1)) * inv_std.reshape(1, -1, 1, 1) + beta
        return FeatureMap(y), None

    n_per_channel = x.n * x.h * x.w
    if n_per_channel < 2:
        raise ConfigError(
            f"train-mode batch norm needs at least 2 values per channel, got {n_per_channel}"
        )
    mean = x.data.mean(axis=(0, 2, 3))
    var = x.data.var(axis=(0, 2, 3))  # biased estimator
    inv_std = 1.0 / np.sqrt(var + p.eps)
    x_hat = (x.data - mean.reshape(1, -1, 1, 1)) * inv_std.reshape(1, -1, 1, 1)
    y = gamma * x_hat + beta
    p.running_mean = ((1.0 - p.momentum) * p.running_mean + p.momentum * mean).astype(p.running_mean.dtype)
    p.running_var = ((1.0 - p.momentum) * p.running_var + p.momentum * var).astype(p.running_var.dtype)
    p.initialized = True
    return FeatureMap(y), BatchNormCache(x_hat=x_hat, mean=mean, var=var, inv_std=inv_std)


def batchnorm_backward(
    p: BatchNormParams, x: FeatureMap, grad_out: FeatureMap, cache: BatchNormCache | None
) -> dict[str, np.ndarray]:
    """Gradients of a train-mode batch norm forward.

    Returns a dict with keys ``x``, ``gamma``, ``beta``.
    """
    if cache is None:
        raise MissingCacheError(
            "batch norm backward requires the cache produced by a train-mode forward"
        )
    if grad_out.shape != x.shape:
        raise ShapeMismatchError(
            f"batch norm backward: gradient shape {grad_out.shape} does not match input {x.shape}"
        )
    r = x.n * x.h * x.w
    g = grad_out.data
    grad_beta = g.sum(axis=(0, 2, 3))
    grad_gamma = (g * cache.x_hat).sum(axis=(0, 2, 3))

    gamma = p.gamma.reshape(1, -1, 1, 1)
    inv_std = cache.inv_std.reshape(1, -1, 1, 1)
    centered = x.data - cache.mean.reshape(1, -1, 1, 1)
    g_hat = g * gamma
    grad_var = (g_hat * centered).sum(axis=(0, 2, 3)) * (-0.5) * cache.inv_std**3
    grad_mean = -(g_hat.sum(axis=(0, 2, 3))) * cache.inv_std + grad_var * (
        -2.0 / r
    ) * centered.sum(axis=(0, 2, 3))
    grad_x = (
        g_hat * inv_std
        + grad_var.reshape(1, -1, 1, 1) * 2.0 * centered / r
        + grad_mean.reshape(1, -1, 1, 1) / r
    )
    return {"x": grad_x, "gamma": grad_gamma, "beta": grad_beta}
