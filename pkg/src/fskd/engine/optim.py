"""SGD with momentum and L2 weight decay."""

from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class SgdState:
    learning_rate: float
    momentum: float = 0.9
    weight_decay: float = 0.0
    velocity: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


def sgd_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: SgdState) -> None:
    """Update ``params`` in place.

    v <- momentum * v + grad + weight_decay * param
    param <- param - lr * v

    A missing gradient (``None``) is treated as zero.
    """
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} params but {len(grads)} grads")
    if not state.velocity:
        state.velocity = [np.zeros_like(p.data) for p in params]
    if len(state.velocity) != len(params):
        raise ValueError("optimizer state was built for a different parameter list")
    for p, g, v in zip(params, grads, state.velocity):
        if v.shape != p.shape:
            raise ValueError(f"velocity shape {v.shape} does not match param shape {p.shape}")
        if g is not None and np.shape(g) != p.shape:
            raise ValueError(f"grad shape {np.shape(g)} does not match param shape {p.shape}")
        v *= state.momentum
        if g is not None:
            v += g
        if state.weight_decay:
            v += state.weight_decay * p.data
        p.data -= state.learning_rate * v


class SGD:
    """Stateful wrapper pairing a parameter list with its :class:`SgdState`."""

    def __init__(self, params: Sequence[Tensor], lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = list(params)
        self.state = SgdState(lr, momentum, weight_decay, [np.zeros_like(p.data) for p in self.params])

    @property
    def lr(self) -> float:
        return self.state.learning_rate

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.learning_rate = float(value)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        sgd_step(self.params, [p.grad for p in self.params], self.state)

    def state_arrays(self) -> Dict[str, np.ndarray]:
        return {f"velocity.{i}": v for i, v in enumerate(self.state.velocity)}
