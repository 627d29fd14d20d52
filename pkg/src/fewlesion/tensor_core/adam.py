"""Adam with bias correction."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState
) -> dict[str, np.ndarray]:
    """Return updated copies of ``params``; moments and step count advance in ``state``.

    Parameters missing from ``grads`` are returned unchanged and their moments untouched.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    out = {}
    for name, value in params.items():
        g = grads.get(name)
        if g is None:
            out[name] = value
            continue
        if g.shape != value.shape:
            raise ValueError(f"adam_step: gradient {g.shape} does not match parameter '{name}' {value.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(value)
            v = np.zeros_like(value)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        out[name] = value - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return out


class Adam:
    """Adam over the trainable entries of a parameter registry."""

    def __init__(self, registry, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.registry = registry
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def step(self) -> None:
        params = {}
        grads = {}
        for name, tensor in self.registry.trainable_items():
            params[name] = tensor.data
            if tensor.grad is not None:
                grads[name] = tensor.grad
        if not grads:
            return
        updated = adam_step(params, grads, self.state)
        for name in grads:
            self.registry[name].data = updated[name]

    def zero_grad(self) -> None:
        for _, tensor in self.registry.items():
            tensor.grad = None
