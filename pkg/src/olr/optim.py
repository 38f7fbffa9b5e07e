"""RMSProp optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class RmsPropState:
    learning_rate: float = 1e-3
    decay: float = 0.9
    epsilon: float = 1e-8
    mean_square: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.decay < 1:
            raise ValueError("decay must lie in (0, 1)")


def rmsprop_step(state: RmsPropState, params: Sequence[Tensor | np.ndarray],
                 grads: Sequence[np.ndarray]) -> None:
    """Apply one RMSProp update to ``params`` in place.

    ms <- decay * ms + (1 - decay) * g**2
    p  <- p - lr * g / sqrt(ms + eps)
    """
    if len(params) != len(grads):
        raise ValueError(f"got {len(params)} params but {len(grads)} gradients")
    arrays = [p.data if isinstance(p, Tensor) else p for p in params]
    for i, (p, g) in enumerate(zip(arrays, grads)):
        if p.shape != np.shape(g):
            raise ValueError(f"param {i}: shape {p.shape} does not match gradient {np.shape(g)}")
    if not state.mean_square:
        state.mean_square = [np.zeros_like(p) for p in arrays]
    elif len(state.mean_square) != len(arrays):
        raise ValueError("optimizer state tracks a different number of parameters")
    rho, lr, eps = state.decay, state.learning_rate, state.epsilon
    for p, g, ms in zip(arrays, grads, state.mean_square):
        g = np.asarray(g, dtype=p.dtype)
        ms *= rho
        ms += (1 - rho) * g * g
        p -= lr * g / np.sqrt(ms + eps)
