"""AdamW with decoupled weight decay.

Decay multiplies parameters by (1 - lr * wd) before the moment-based update,
so a zero-gradient step shrinks a parameter by exactly that factor and leaves
it untouched when wd == 0. Parameters are visited in list order; the update
itself runs in the kernels backend.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import UsageError


@dataclass
class AdamWState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def init_adamw(params, lr, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
    """Fresh state with zero moments matching the parameter shapes."""
    if lr <= 0:
        raise UsageError(f"lr must be > 0, got {lr}")
    state = AdamWState(lr=lr, beta1=beta1, beta2=beta2, eps=eps,
                       weight_decay=weight_decay)
    for p in params:
        state.m.append(np.zeros_like(p.data))
        state.v.append(np.zeros_like(p.data))
    return state


def adamw_step(params, grads, state):
    """One in-place update; a None grad means zero gradient for that param."""
    if len(params) != len(state.m):
        raise UsageError(
            f"optimizer state holds {len(state.m)} params, got {len(params)}")
    if len(grads) != len(params):
        raise UsageError(f"{len(grads)} grads for {len(params)} params")
    state.step += 1
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        else:
            g = np.asarray(g, dtype=p.data.dtype)
        if g.shape != p.data.shape:
            raise UsageError(
                f"grad shape {g.shape} does not match param shape {p.data.shape}")
        kernels.adamw_update(
            p.data.reshape(-1), np.ascontiguousarray(g).reshape(-1),
            m.reshape(-1), v.reshape(-1),
            state.lr, state.beta1, state.beta2, state.eps,
            state.weight_decay, state.step)
    return params, state
