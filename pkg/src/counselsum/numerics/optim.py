"""Plain SGD with a per-epoch multiplicative learning-rate decay."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class OptimizerState:
    initial_lr: float = 1e-3
    decay_factor: float = 0.1
    epoch: int = 0

    @property
    def learning_rate(self) -> float:
        return self.initial_lr * self.decay_factor ** self.epoch

    def advance_epoch(self) -> None:
        self.epoch += 1


def sgd_step(params: Sequence[Tensor], grads: Sequence[np.ndarray],
             state: OptimizerState) -> None:
    """In-place p <- p - lr * g for every (param, grad) pair."""
    if len(params) != len(grads):
        raise ValueError("params/grads length mismatch")
    lr = state.learning_rate
    for p, g in zip(params, grads):
        if p.data.shape != np.shape(g):
            raise ValueError(f"grad shape {np.shape(g)} does not match param {p.data.shape}")
        p.data -= lr * np.asarray(g, dtype=np.float64)
