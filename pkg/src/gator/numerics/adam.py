"""Adam optimizer over a list of tensors."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gator.numerics.tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: list[Tensor], grads: list[np.ndarray]) -> None:
    """Apply one bias-corrected Adam update in place.

    Every gradient is checked before anything is modified, so a refused step
    leaves parameters and moments untouched.
    """
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} params but {len(grads)} grads")
    for p, g in zip(params, grads):
        if g.shape != p.shape:
            raise ValueError(f"{p.name}: grad shape {g.shape} != param shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {p.name!r}")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        key = p.name or f"#{i}"
        m = state.m.get(key)
        v = state.v.get(key)
        if m is None:
            m = np.zeros_like(p.values)
            v = np.zeros_like(p.values)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[key], state.v[key] = m, v
        p.values = p.values - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
