"""AdamW with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from .errors import ShapeMismatch


@dataclass
class AdamWConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


@dataclass
class AdamWState:
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)

    @classmethod
    def zeros_like(cls, params) -> "AdamWState":
        return cls(0, [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adamw_step(params: List[np.ndarray], grads: List[np.ndarray], state: AdamWState, config: AdamWConfig):
    """One in-place AdamW update.

    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * weight_decay * theta,
    with the decay term using the pre-update theta.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch("params, grads and optimizer state differ in length")
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeMismatch(f"parameter {p.shape} vs gradient {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = config.lr * (m / c1) / (np.sqrt(v / c2) + config.eps)
        update += config.lr * config.weight_decay * p
        p -= update
    return params


class AdamW:
    """Stateful wrapper around :func:`adamw_step` for a fixed parameter list."""

    def __init__(self, params, config: AdamWConfig = None):
        self.params = list(params)
        self.config = config or AdamWConfig()
        self.state = AdamWState.zeros_like([p.value for p in self.params])

    def step(self, grads: Dict):
        adamw_step(
            [p.value for p in self.params],
            [grads[p] for p in self.params],
            self.state,
            self.config,
        )
