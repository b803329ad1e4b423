"""Adam optimiser over a name -> Tensor parameter mapping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import StateError
from .tensor import Tensor

BETA1 = 0.9
BETA2 = 0.98
EPS = 1e-9


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    # per-parameter step counts, so bias correction stays right for
    # parameters that sat out some steps
    t: dict[str, int] = field(default_factory=dict)


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray | None],
    lr: float,
    state: AdamState,
    beta1: float = BETA1,
    beta2: float = BETA2,
    eps: float = EPS,
) -> AdamState:
    """One bias-corrected Adam update, in place on ``params``.

    A parameter whose gradient is missing or identically zero is left
    untouched, moments included.
    """
    state.step += 1
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise StateError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.any(g):
            continue
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        elif m.shape != p.shape or v.shape != p.shape:
            raise StateError(f"{name}: moment shape {m.shape} != parameter shape {p.shape}")
        t = state.t.get(name, 0) + 1
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)
        state.m[name], state.v[name], state.t[name] = m, v, t
    return state


def clip_grad_norm(grads: dict[str, np.ndarray | None], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values() if g is not None)))
    if max_norm > 0 and total > max_norm:
        k = max_norm / (total + 1e-12)
        for name, g in grads.items():
            if g is not None:
                grads[name] = g * k
    return total
