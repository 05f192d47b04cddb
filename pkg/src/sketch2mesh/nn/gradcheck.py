"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .core import Graph, ParamStore, Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max|a - n| scaled by the larger of max|a|, max|n| (floored at 1e-8)."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(build: Callable[[Graph, list[Tensor]], Tensor], store: ParamStore,
                    inputs: list[np.ndarray], h: float = 1e-5, seed: int = 0) -> dict[str, float]:
    """Compare analytic gradients of ``build`` against central differences.

    ``build(graph, input_tensors)`` must return a scalar. Each graph gets a
    fresh ``default_rng(seed)`` so stochastic layers repeat exactly. Returns the
    relative error per parameter name and per input (``"input<i>"``).
    """
    def run(train_inputs):
        g = Graph(store, rng=np.random.default_rng(seed))
        xs = [g.input(x, requires_grad=True) for x in train_inputs]
        return g, xs, build(g, xs)

    buffers = {k: v.copy() for k, v in store.buffers.items()}
    g, xs, loss = run(inputs)
    leaf = g.backward(loss)
    analytic = {k: v.copy() for k, v in store.grads.items()}
    for i, x in enumerate(xs):
        analytic[f"input{i}"] = leaf.get(x.index, np.zeros_like(x.data))

    def value(inp):
        store.buffers.update({k: v.copy() for k, v in buffers.items()})
        g, _, loss = run(inp)
        g.release()
        return loss.item()

    errors = {}
    for name in store.params:
        p = store.params[name]
        num = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            fp = value(inputs)
            p[idx] = orig - h
            fm = value(inputs)
            p[idx] = orig
            num[idx] = (fp - fm) / (2 * h)
        errors[name] = relative_error(analytic[name], num)
    for i, x in enumerate(inputs):
        num = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            xp = [a.copy() for a in inputs]
            xp[i][idx] += h
            fp = value(xp)
            xp[i][idx] -= 2 * h
            fm = value(xp)
            num[idx] = (fp - fm) / (2 * h)
        errors[f"input{i}"] = relative_error(analytic[f"input{i}"], num)
    store.buffers.update(buffers)
    return errors
