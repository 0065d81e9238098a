"""ADAM and SGD-with-momentum parameter updates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["AdamState", "SgdmState", "adam_step", "sgdm_step"]


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


@dataclass
class SgdmState:
    velocity: dict = field(default_factory=dict)


def adam_step(
    params: dict,
    grads: dict,
    state: AdamState,
    learning_rate: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected ADAM update, in place."""
    state.t += 1
    t = state.t
    for key, p in params.items():
        g = grads[key].astype(p.dtype, copy=False)
        m = state.m.setdefault(key, np.zeros_like(p))
        v = state.v.setdefault(key, np.zeros_like(p))
        m += (1 - beta1) * (g - m)
        v += (1 - beta2) * (g * g - v)
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        p -= (learning_rate * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype, copy=False)


def sgdm_step(
    params: dict,
    grads: dict,
    state: SgdmState,
    learning_rate: float = 1e-2,
    momentum: float = 0.9,
) -> None:
    """Momentum SGD: v <- momentum*v + g; p <- p - lr*v. Momentum 0 is plain SGD."""
    for key, p in params.items():
        g = grads[key].astype(p.dtype, copy=False)
        v = state.velocity.setdefault(key, np.zeros_like(p))
        v *= momentum
        v += g
        p -= (learning_rate * v).astype(p.dtype, copy=False)
