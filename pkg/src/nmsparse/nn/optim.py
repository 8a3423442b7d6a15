"""Stochastic gradient descent with momentum and decoupled-by-name state."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, ShapeMismatchError


def sgd_step(
    param: np.ndarray,
    grad: np.ndarray,
    lr: float,
    momentum: float = 0.0,
    weight_decay: float = 0.0,
    velocity: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """One SGD update; returns (new_param, new_velocity).

    The update follows the common heavy-ball convention:

        g = grad + weight_decay * param
        v = momentum * v + g
        param = param - lr * v
    """
    if lr < 0:
        raise ConfigError(f"learning rate must be non-negative, got {lr}")
    if param.shape != grad.shape:
        raise ShapeMismatchError(
            f"sgd: parameter shape {param.shape} does not match gradient shape {grad.shape}"
        )
    g = grad + weight_decay * param
    if velocity is None:
        v = g.astype(param.dtype, copy=True)
    else:
        if velocity.shape != param.shape:
            raise ShapeMismatchError(
                f"sgd: velocity shape {velocity.shape} does not match parameter shape {param.shape}"
            )
        v = momentum * velocity + g
    return (param - lr * v).astype(param.dtype), v.astype(param.dtype)


class SGD:
    """Momentum SGD that keeps one velocity buffer per parameter name."""

    def __init__(self, momentum: float = 0.0):
        if not 0 <= momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {momentum}")
        self.momentum = momentum
        self._velocity: dict[str, np.ndarray] = {}

    def step(
        self,
        name: str,
        param: np.ndarray,
        grad: np.ndarray,
        lr: float,
        weight_decay: float = 0.0,
    ) -> np.ndarray:
        new_param, self._velocity[name] = sgd_step(
            param, grad, lr, self.momentum, weight_decay, self._velocity.get(name)
        )
        return new_param

    def reset(self) -> None:
        self._velocity.clear()
