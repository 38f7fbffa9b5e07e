"""Small helpers shared by the trainers."""

from __future__ import annotations

import logging
from typing import Callable, Iterator, Sequence

import numpy as np

from . import tensor as T
from .optim import RmsPropState, rmsprop_step
from .tensor import Tensor

log = logging.getLogger("olr")


def minibatches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


def step(loss: Tensor, params: Sequence[Tensor], state: RmsPropState) -> float:
    grads = T.grad(loss, params)
    rmsprop_step(state, params, grads)
    return float(loss.data)


def batched(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Apply ``fn`` over leading-axis chunks of ``x`` without recording a tape."""
    with T.no_grad():
        parts = [fn(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
    if not parts:
        return np.zeros((0,), dtype=np.float32)
    return np.concatenate(parts, axis=0)
