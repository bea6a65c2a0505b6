"""Heavy-ball SGD: v <- mu*v + g, p <- p - lr*v."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BadConfig, ShapeMismatch


@dataclass
class MomentumState:
    lr: float = 0.01
    mu: float = 0.9
    velocities: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.lr > 0:
            raise BadConfig(f"learning rate must be positive, got {self.lr}")
        if not 0 <= self.mu < 1:
            raise BadConfig(f"momentum must lie in [0, 1), got {self.mu}")

    @classmethod
    def for_params(cls, params, lr: float = 0.01, mu: float = 0.9) -> "MomentumState":
        return cls(lr, mu, [np.zeros_like(_array(p)) for p in params])

    def reset(self) -> None:
        for v in self.velocities:
            v[...] = 0.0


def _array(p) -> np.ndarray:
    # ndarray also has a .data attribute (a memoryview), so test the type
    return p if isinstance(p, np.ndarray) else p.data


def sgd_momentum_step(params, grads, state: MomentumState):
    """Update ``params`` (Tensors or arrays) in place and return them.

    A ``None`` gradient counts as zero. Velocities are created on first use.
    """
    params = list(params)
    grads = list(grads)
    if len(params) != len(grads):
        raise ShapeMismatch(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.velocities:
        state.velocities = [np.zeros_like(_array(p)) for p in params]
    if len(state.velocities) != len(params):
        raise ShapeMismatch("momentum state does not match the parameter list")
    for p, g, v in zip(params, grads, state.velocities):
        a = _array(p)
        if v.shape != a.shape or (g is not None and np.shape(g) != a.shape):
            raise ShapeMismatch(f"parameter {a.shape}, gradient {np.shape(g)}, velocity {v.shape}")
        v *= state.mu
        if g is not None:
            v += g
        a -= state.lr * v
    return params


__all__ = ["MomentumState", "sgd_momentum_step"]
