from __future__ import annotations

from typing import Iterable, Optional

import numpy as np

from .core import ParamStore


def adam_step(params: ParamStore, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, names: Optional[Iterable[str]] = None) -> ParamStore:
    """One bias-corrected Adam update using the gradients held in ``params``.

    Updates in place and returns the store. ``names`` restricts the update to a
    subset of parameters (moments of the others are left untouched).
    """
    params.step_count += 1
    t = params.step_count
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for k in (params.params if names is None else names):
        g = params.grads[k]
        if g.shape != params.params[k].shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {k!r} {params.params[k].shape}")
        m1 = beta1 * params.m1[k] + (1.0 - beta1) * g
        m2 = beta2 * params.m2[k] + (1.0 - beta2) * (g * g)
        params.m1[k] = m1
        params.m2[k] = m2
        params.params[k] = params.params[k] - lr * (m1 / c1) / (np.sqrt(m2 / c2) + eps)
    return params
