from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 0.0002
    decay: float = 0.8
    decay_every: int = 15
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    epoch: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def current_lr(self) -> float:
        """Learning rate after the step decay for the current epoch."""
        return self.lr * self.decay ** (self.epoch // self.decay_every)


def adam_step(params: dict, grads: dict, state: AdamState) -> dict:
    """One in-place Adam update over matching ``params``/``grads`` dicts."""
    if params.keys() != grads.keys():
        raise ValueError("params and grads must have the same keys")
    state.step += 1
    t = state.step
    lr = state.current_lr()
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"shape mismatch for {name}: {g.shape} vs {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        if m.shape != p.shape:
            raise ValueError(f"moment buffer for {name} has shape {m.shape}, parameter {p.shape}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p -= (lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.dtype)
    return params
