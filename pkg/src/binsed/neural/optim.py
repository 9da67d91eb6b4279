"""Adam optimizer over named parameter dictionaries."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state: AdamState, config: AdamConfig = AdamConfig()):
    """One bias-corrected Adam update, applied to ``params`` in place.

    Moment buffers are created lazily per parameter name. Returns
    ``(params, state)`` for convenience.
    """
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValidationError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (config.lr * (m / bc1) / (np.sqrt(v / bc2) + config.eps)).astype(p.dtype)
    return params, state
