"""Momentum SGD with L2 weight decay folded into the gradient."""

from __future__ import annotations

from typing import Iterable, Mapping

import numpy as np

from railwave.errors import MissingGradient
from railwave.nn.tensor import Tensor


def sgd_step(
    params: Mapping[str, Tensor],
    velocities: dict[str, np.ndarray],
    lr: float,
    momentum: float = 0.0,
    weight_decay: float = 0.0,
) -> None:
    """In place: ``v <- momentum * v + grad + wd * p``; ``p <- p - lr * v``.

    ``velocities`` is updated in place (float64 buffers keyed like ``params``).
    """
    for name, p in params.items():
        if p.grad is None:
            raise MissingGradient(f"parameter {name!r} has no gradient")
    for name, p in params.items():
        value = np.asarray(p.data, dtype=np.float64)
        v = velocities.get(name)
        step = p.grad + weight_decay * value
        v = step if v is None else momentum * v + step
        velocities[name] = v
        if lr != 0.0:
            p.data = (value - lr * v).astype(p.data.dtype)


class SGD:
    def __init__(self, params: Mapping[str, Tensor], momentum: float = 0.9, weight_decay: float = 1e-4) -> None:
        self.params = dict(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocities: dict[str, np.ndarray] = {}

    def step(self, lr: float) -> None:
        sgd_step(self.params, self.velocities, lr, self.momentum, self.weight_decay)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: v.copy() for name, v in self.velocities.items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        unknown = set(state) - set(self.params)
        if unknown:
            raise KeyError(f"optimizer state for unknown parameters: {sorted(unknown)}")
        self.velocities = {k: np.array(v, dtype=np.float64) for k, v in state.items()}


def step_schedule(base_lr: float, epochs: int, milestones: Iterable[float] = (0.6, 0.8), factor: float = 0.2):
    """Learning rate per epoch, multiplied by ``factor`` at each fractional milestone."""
    cuts = [int(round(m * epochs)) for m in milestones]

    def lr_at(epoch: int) -> float:
        return base_lr * factor ** sum(epoch >= c for c in cuts)

    return lr_at
