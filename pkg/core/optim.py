# core/optim.py → Adam Optimizer

from typing import Dict, Tuple

import numpy as np

from core.errors import ShapeError
from core.tensor import DiffArray


class AdamState:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def __repr__(self):
        return f"<AdamState step={self.step} lr={self.lr}>"


def adam_step(params: Dict[str, DiffArray], grads: Dict[str, np.ndarray],
              state: AdamState) -> Tuple[Dict[str, DiffArray], AdamState]:
    """One bias-corrected Adam update, in place on `params`."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.value)
        if g.shape != p.value.shape:
            raise ShapeError(f"adam_step: gradient for {name} has shape {g.shape}, parameter {p.value.shape}")
        m = b1 * state.m.get(name, 0.0) + (1.0 - b1) * g
        v = b2 * state.v.get(name, 0.0) + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p.value = p.value - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state
