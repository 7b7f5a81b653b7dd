from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DivergenceError


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> None:
    """One bias-corrected Adam update, applied in place to ``params`` and ``state``.

    ``params`` and ``grads`` are dicts with matching keys. Keys are visited in
    sorted order so the update is deterministic.
    """
    for key in grads:
        if not np.all(np.isfinite(grads[key])):
            raise DivergenceError(f"non-finite gradient for parameter {key}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** state.t
    corr2 = 1.0 - b2 ** state.t
    for key in sorted(grads):
        g = grads[key]
        p = params[key]
        if key not in state.m:
            state.m[key] = np.zeros_like(p)
            state.v[key] = np.zeros_like(p)
        m = state.m[key] = b1 * state.m[key] + (1 - b1) * g
        v = state.v[key] = b2 * state.v[key] + (1 - b2) * g * g
        step = state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
        params[key] = (p - step).astype(p.dtype, copy=False)
