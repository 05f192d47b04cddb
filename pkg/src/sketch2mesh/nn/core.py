"""Tape-based reverse-mode differentiation over numpy arrays.

A :class:`Graph` records every operation in creation order; :meth:`Graph.backward`
walks that order in reverse. Parameters live in :class:`ParamStore` objects and
are pulled into a graph by name, so the same store can be reused across steps.
"""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

DTYPE = np.float64

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class ParamStore:
    """Named parameter arrays plus gradients, Adam moments and non-trainable buffers."""

    def __init__(self, name: str = "params"):
        self.name = name
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.m1: dict[str, np.ndarray] = {}
        self.m2: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.step_count = 0

    def register(self, name: str, value: np.ndarray) -> None:
        if name in self.params or name in self.buffers:
            raise KeyError(f"parameter {name!r} already registered")
        value = np.array(value, dtype=DTYPE)
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        self.m1[name] = np.zeros_like(value)
        self.m2[name] = np.zeros_like(value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        if name in self.params or name in self.buffers:
            raise KeyError(f"buffer {name!r} already registered")
        self.buffers[name] = np.array(value, dtype=DTYPE)

    def uniform(self, name: str, shape: tuple[int, ...], fan_in: int, fan_out: int,
                rng: np.random.Generator) -> None:
        """Register a Glorot-uniform initialised parameter."""
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        self.register(name, rng.uniform(-bound, bound, size=shape))

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def names(self) -> list[str]:
        return list(self.params)

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def copy(self) -> "ParamStore":
        out = ParamStore(self.name)
        for attr in ("params", "grads", "m1", "m2", "buffers"):
            setattr(out, attr, {k: v.copy() for k, v in getattr(self, attr).items()})
        out.step_count = self.step_count
        return out

    def to_entries(self) -> dict[str, np.ndarray]:
        entries: dict[str, np.ndarray] = {}
        for k, v in self.params.items():
            entries[k] = v
            entries[k + ".m1"] = self.m1[k]
            entries[k + ".m2"] = self.m2[k]
        entries.update(self.buffers)
        entries[f"__step/{self.name}"] = np.array([self.step_count], dtype=DTYPE)
        return entries

    def load_entries(self, entries: dict[str, np.ndarray], strict: bool = True) -> None:
        """Overwrite registered parameters and buffers from checkpoint entries.

        Shapes must match exactly; a missing or reshaped entry raises.
        """
        for table in (self.params, self.buffers):
            for k, v in table.items():
                if k not in entries:
                    if strict:
                        raise KeyError(f"checkpoint is missing {k!r}")
                    continue
                src = entries[k]
                if src.shape != v.shape:
                    raise ValueError(f"shape mismatch for {k!r}: checkpoint {src.shape}, model {v.shape}")
                table[k] = src.astype(DTYPE)
        for k in self.params:
            for suffix, table in ((".m1", self.m1), (".m2", self.m2)):
                if k + suffix in entries:
                    table[k] = entries[k + suffix].astype(DTYPE).reshape(self.params[k].shape)
            self.grads[k] = np.zeros_like(self.params[k])
        step = entries.get(f"__step/{self.name}")
        if step is not None:
            self.step_count = int(step.ravel()[0])


class Tensor:
    """An array produced inside a :class:`Graph`."""

    __slots__ = ("data", "graph", "parents", "backward_fn", "index", "needs_grad", "param_name")

    def __init__(self, data: np.ndarray, graph: "Graph", parents: tuple["Tensor", ...] = (),
                 backward_fn: Optional[BackwardFn] = None, needs_grad: bool = False,
                 param_name: Optional[str] = None):
        self.data = data
        self.graph = graph
        self.parents = parents
        self.backward_fn = backward_fn
        self.needs_grad = needs_grad
        self.param_name = param_name
        self.index = -1

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, index={self.index})"

    # arithmetic with numpy-style broadcasting
    def _lift(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return self.graph.constant(other)

    def __add__(self, other):
        other = self._lift(other)
        a, b = self, other
        return self.graph.record(a.data + b.data, (a, b),
                                 lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))

    __radd__ = __add__

    def __sub__(self, other):
        other = self._lift(other)
        a, b = self, other
        return self.graph.record(a.data - b.data, (a, b),
                                 lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __neg__(self):
        return self.graph.record(-self.data, (self,), lambda g: (-g,))

    def __mul__(self, other):
        other = self._lift(other)
        a, b = self, other
        return self.graph.record(a.data * b.data, (a, b),
                                 lambda g: (unbroadcast(g * b.data, a.shape),
                                            unbroadcast(g * a.data, b.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        a, b = self, other
        return self.graph.record(
            a.data / b.data, (a, b),
            lambda g: (unbroadcast(g / b.data, a.shape),
                       unbroadcast(-g * a.data / (b.data * b.data), b.shape)))

    def __getitem__(self, key):
        src_shape = self.shape

        def backward(g):
            out = np.zeros(src_shape, dtype=g.dtype)
            if _is_advanced(key):
                np.add.at(out, key, g)
            else:
                out[key] = g
            return (out,)

        return self.graph.record(self.data[key], (self,), backward)

    def sum(self, axis=None, keepdims: bool = False):
        src_shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, src_shape).copy(),)

        return self.graph.record(np.asarray(self.data.sum(axis=axis, keepdims=keepdims)), (self,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        count = self.data.size if axis is None else int(np.prod([self.shape[a] for a in np.atleast_1d(axis)]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src_shape = self.shape
        return self.graph.record(self.data.reshape(shape), (self,), lambda g: (g.reshape(src_shape),))

    def transpose(self, *axes):
        inv = np.argsort(axes)
        return self.graph.record(self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),))

    def square(self):
        x = self.data
        return self.graph.record(x * x, (self,), lambda g: (2.0 * g * x,))

    def abs(self):
        x = self.data
        return self.graph.record(np.abs(x), (self,), lambda g: (g * np.sign(x),))

    def log(self):
        x = self.data
        return self.graph.record(np.log(x), (self,), lambda g: (g / x,))

    def sqrt(self):
        y = np.sqrt(self.data)
        return self.graph.record(y, (self,), lambda g: (0.5 * g / y,))

    def clip(self, lo: float, hi: float):
        x = self.data
        inside = (x >= lo) & (x <= hi)
        return self.graph.record(np.clip(x, lo, hi), (self,), lambda g: (g * inside,))


def _is_advanced(key) -> bool:
    keys = key if isinstance(key, tuple) else (key,)
    return any(isinstance(k, (np.ndarray, list)) for k in keys)


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Graph:
    """Records operations for one forward pass.

    ``train`` switches batch-norm and dropout behaviour. ``rng`` drives dropout masks.
    """

    def __init__(self, *stores: ParamStore, train: bool = True,
                 rng: Optional[np.random.Generator] = None, check_finite: bool = True):
        self.stores = stores
        self.train = train
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.check_finite = check_finite
        self.nodes: list[Tensor] = []
        self._param_cache: dict[str, Tensor] = {}
        self.released = False

    def _add(self, t: Tensor) -> Tensor:
        if self.released:
            raise RuntimeError("graph was released; build a new one")
        if self.check_finite and not np.all(np.isfinite(t.data)):
            raise FloatingPointError(f"non-finite values produced at node {len(self.nodes)}")
        t.index = len(self.nodes)
        self.nodes.append(t)
        return t

    def store_for(self, name: str) -> ParamStore:
        for s in self.stores:
            if name in s.params or name in s.buffers:
                return s
        raise KeyError(f"no parameter or buffer named {name!r}")

    def param(self, name: str) -> Tensor:
        cached = self._param_cache.get(name)
        if cached is not None:
            return cached
        store = self.store_for(name)
        t = self._add(Tensor(store.params[name], self, needs_grad=True, param_name=name))
        self._param_cache[name] = t
        return t

    def buffer(self, name: str) -> np.ndarray:
        return self.store_for(name).buffers[name]

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        self.store_for(name).buffers[name] = value

    def constant(self, value) -> Tensor:
        return self._add(Tensor(np.asarray(value, dtype=DTYPE), self))

    def input(self, value, requires_grad: bool = False) -> Tensor:
        """Leaf tensor; ``requires_grad`` leaves expose their gradient via :meth:`grad_of`."""
        return self._add(Tensor(np.array(value, dtype=DTYPE), self, needs_grad=requires_grad))

    def record(self, data: np.ndarray, parents: tuple[Tensor, ...], backward_fn: BackwardFn) -> Tensor:
        needs = any(p.needs_grad for p in parents)
        return self._add(Tensor(np.asarray(data), self, parents, backward_fn if needs else None, needs))

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Populate parameter gradients in every bound store.

        Unused parameters receive zero gradients. Returns the gradient of every
        leaf that requested one, keyed by node index. The tape is released
        afterwards, so a graph supports a single backward pass.
        """
        if self.released:
            raise RuntimeError("backward already ran on this graph")
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        for s in self.stores:
            s.zero_grad()
        grads: dict[int, np.ndarray] = {loss.index: np.ones_like(loss.data)}
        leaf_grads: dict[int, np.ndarray] = {}
        for node in reversed(self.nodes[: loss.index + 1]):
            g = grads.pop(node.index, None)
            if g is None:
                continue
            if node.param_name is not None:
                store = self.store_for(node.param_name)
                store.grads[node.param_name] = store.grads[node.param_name] + g
                continue
            if node.backward_fn is None:
                if node.needs_grad:
                    leaf_grads[node.index] = g
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.needs_grad:
                    continue
                if self.check_finite and not np.all(np.isfinite(pg)):
                    raise FloatingPointError(f"non-finite gradient flowing into node {parent.index}")
                prev = grads.get(parent.index)
                grads[parent.index] = pg if prev is None else prev + pg
        self.release()
        return leaf_grads

    def release(self) -> None:
        """Drop the tape; tensors keep their values but no longer reference each other."""
        for node in self.nodes:
            node.parents = ()
            node.backward_fn = None
        self.nodes = []
        self._param_cache = {}
        self.released = True


def backward(graph: Graph, loss: Tensor) -> dict[int, np.ndarray]:
    return graph.backward(loss)
