"""Adam with bias-corrected moment estimates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spec import SpecError


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict, learning_rate: float = 0.001, **kw) -> AdamState:
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()},
                   0, learning_rate, **kw)


def adam_step(params: dict, grads: dict, state: AdamState) -> tuple[dict, AdamState]:
    """One update; inputs are left untouched and fresh dicts are returned."""
    if params.keys() != grads.keys():
        raise SpecError("parameter and gradient names differ")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_params, m_new, v_new = {}, {}, {}
    for name, theta in params.items():
        g = grads[name]
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(theta)
            v = np.zeros_like(theta)
        if g.shape != theta.shape or m.shape != theta.shape:
            raise SpecError(f"{name}: gradient shape {g.shape} vs parameter {theta.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_params[name] = theta - state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
        m_new[name] = m
        v_new[name] = v
    return new_params, AdamState(m_new, v_new, t, state.learning_rate, b1, b2, state.eps)
