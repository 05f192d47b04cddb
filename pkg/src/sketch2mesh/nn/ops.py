"""Differentiable layers used by the two networks.

Layer functions take the input tensor first and look their parameters up by
name in the tensor's graph. Parameter naming is ``<layer>.w`` / ``<layer>.b`` for
dense and conv layers and ``<layer>.gamma`` / ``<layer>.beta`` for batch-norm.
"""
from __future__ import annotations

import numpy as np

from .core import DTYPE, ParamStore, Tensor


class DimensionError(ValueError):
    pass


# ---------------------------------------------------------------- registration

def init_dense(store: ParamStore, name: str, fan_in: int, fan_out: int,
               rng: np.random.Generator, bias: bool = True) -> None:
    store.uniform(f"{name}.w", (fan_in, fan_out), fan_in, fan_out, rng)
    if bias:
        store.register(f"{name}.b", np.zeros(fan_out))


def init_conv(store: ParamStore, name: str, in_ch: int, out_ch: int, kernel: int,
              rng: np.random.Generator, dims: int = 2, bias: bool = True) -> None:
    shape = (out_ch, in_ch) + (kernel,) * dims
    k = kernel ** dims
    store.uniform(f"{name}.w", shape, in_ch * k, out_ch * k, rng)
    if bias:
        store.register(f"{name}.b", np.zeros(out_ch))


def init_batchnorm(store: ParamStore, name: str, channels: int) -> None:
    store.register(f"{name}.gamma", np.ones(channels))
    store.register(f"{name}.beta", np.zeros(channels))
    store.register_buffer(f"{name}.running_mean", np.zeros(channels))
    store.register_buffer(f"{name}.running_var", np.ones(channels))


# ---------------------------------------------------------------- layers

def dense(x: Tensor, name: str, bias: bool = True) -> Tensor:
    g = x.graph
    w = g.param(f"{name}.w")
    if x.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"dense {name}: input shape {x.shape} incompatible with weight shape {w.shape}")
    xd, wd = x.data, w.data
    y = g.record(xd @ wd, (x, w), lambda gr: (gr @ wd.T, xd.T @ gr))
    if bias:
        y = y + g.param(f"{name}.b")
    return y


def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def conv(x: Tensor, name: str, stride: int = 1, pad: int = 0, bias: bool = True) -> Tensor:
    """Cross-correlation over 2 or 3 spatial axes (weight ``O x C x K x K [x K]``)."""
    g = x.graph
    w = g.param(f"{name}.w")
    dims = w.ndim - 2
    kernel = w.shape[2:]
    if x.ndim != dims + 2 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"conv {name}: input shape {x.shape} incompatible with weight shape {w.shape}")
    out_sizes = tuple(conv_output_size(s, k, stride, pad) for s, k in zip(x.shape[2:], kernel))
    if min(out_sizes) < 1:
        raise DimensionError(f"conv {name}: non-positive output size {out_sizes} for input {x.shape}")

    xp = np.pad(x.data, ((0, 0), (0, 0)) + ((pad, pad),) * dims) if pad else x.data
    B, C = xp.shape[:2]
    O = w.shape[0]
    ksize = int(np.prod(kernel))
    # im2col, channel-major: (C, K, B, *out) keeps the spatial rows contiguous
    cols = np.empty((C, ksize, B) + out_sizes, dtype=xp.dtype)
    xt = xp.swapaxes(0, 1)
    slices = []
    for j, offs in enumerate(np.ndindex(*kernel)):
        sl = (slice(None), slice(None)) + tuple(
            slice(o, o + stride * (s - 1) + 1, stride) for o, s in zip(offs, out_sizes))
        slices.append(sl)
        cols[:, j] = xt[sl]
    cols = cols.reshape(C * ksize, -1)
    wmat = w.data.reshape(O, C * ksize)
    y = (wmat @ cols).reshape((O, B) + out_sizes).swapaxes(0, 1)
    xshape = x.shape
    wshape = w.shape

    def backward(gr):
        g2 = np.ascontiguousarray(gr.swapaxes(0, 1)).reshape(O, -1)
        gw = (g2 @ cols.T).reshape(wshape)
        dcols = (wmat.T @ g2).reshape((C, ksize, B) + out_sizes)
        gx_pad = np.zeros((C, B) + xp.shape[2:], dtype=gr.dtype)
        for j, sl in enumerate(slices):
            gx_pad[sl] += dcols[:, j]
        gx_pad = gx_pad.swapaxes(0, 1)
        if pad:
            gx = gx_pad[(slice(None), slice(None)) + (slice(pad, -pad),) * dims]
        else:
            gx = gx_pad
        return np.ascontiguousarray(gx).reshape(xshape), gw

    out = g.record(np.ascontiguousarray(y), (x, w), backward)
    if bias:
        b = g.param(f"{name}.b")
        out = out + b.reshape((1, -1) + (1,) * dims)
    return out


def conv2d(x: Tensor, name: str, stride: int = 1, pad: int = 0, bias: bool = True) -> Tensor:
    if x.ndim != 4:
        raise DimensionError(f"conv2d {name}: expected B x C x H x W input, got {x.shape}")
    return conv(x, name, stride, pad, bias)


def conv3d(x: Tensor, name: str, stride: int = 1, pad: int = 0, bias: bool = True) -> Tensor:
    if x.ndim != 5:
        raise DimensionError(f"conv3d {name}: expected B x C x D x H x W input, got {x.shape}")
    return conv(x, name, stride, pad, bias)


def batchnorm(x: Tensor, name: str, eps: float = 1e-5, momentum: float = 0.9) -> Tensor:
    """Per-channel normalization over batch and spatial axes.

    In training graphs the batch statistics are used and the running moments are
    updated as ``running = momentum * running + (1 - momentum) * batch``.
    """
    g = x.graph
    gamma = g.param(f"{name}.gamma")
    beta = g.param(f"{name}.beta")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, -1) + (1,) * (x.ndim - 2)
    xd = x.data
    if g.train:
        count = xd.size // xd.shape[1]
        if xd.shape[0] < 2:
            raise ValueError(f"batchnorm {name}: training mode needs batch size >= 2, got {xd.shape[0]}")
        mean = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        rm, rv = g.buffer(f"{name}.running_mean"), g.buffer(f"{name}.running_var")
        g.set_buffer(f"{name}.running_mean", momentum * rm + (1.0 - momentum) * mean)
        unbiased = var * count / max(count - 1, 1)
        g.set_buffer(f"{name}.running_var", momentum * rv + (1.0 - momentum) * unbiased)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (xd - mean.reshape(bshape)) * inv.reshape(bshape)

        def backward(gr):
            gmean = gr.mean(axis=axes, keepdims=True)
            gxm = (gr * xhat).mean(axis=axes, keepdims=True)
            return ((gr - gmean - xhat * gxm) * inv.reshape(bshape),)

        normed = g.record(xhat, (x,), backward)
    else:
        mean = g.buffer(f"{name}.running_mean")
        var = g.buffer(f"{name}.running_var")
        inv = (1.0 / np.sqrt(var + eps)).reshape(bshape)
        normed = g.record((xd - mean.reshape(bshape)) * inv, (x,), lambda gr: (gr * inv,))
    return normed * gamma.reshape(bshape) + beta.reshape(bshape)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    xd = x.data
    scale = np.where(xd >= 0, 1.0, slope)
    return x.graph.record(xd * scale, (x,), lambda gr: (gr * scale,))


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    # split form avoids overflow for large |x|
    e = np.exp(-np.abs(xd))
    y = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return x.graph.record(y, (x,), lambda gr: (gr * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return x.graph.record(y, (x,), lambda gr: (gr * (1.0 - y * y),))


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        return x
    dims = x.ndim - 2
    y = x.data
    for ax in range(2, 2 + dims):
        y = np.repeat(y, factor, axis=ax)
    shape = x.shape

    def backward(gr):
        split = list(shape[:2])
        for s in shape[2:]:
            split += [s, factor]
        return (gr.reshape(split).sum(axis=tuple(range(3, 3 + 2 * dims, 2))),)

    return x.graph.record(y, (x,), backward)


def dropout(x: Tensor, rate: float) -> Tensor:
    """Inverted dropout; identity in evaluation graphs or at rate 0."""
    g = x.graph
    if not g.train or rate <= 0.0:
        return x
    keep = (g.rng.random(x.shape) >= rate) / (1.0 - rate)
    return g.record(x.data * keep, (x,), lambda gr: (gr * keep,))


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != b.ndim or a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise DimensionError(f"cannot concatenate {a.shape} and {b.shape} along channels")
    ca = a.shape[1]
    return a.graph.record(np.concatenate([a.data, b.data], axis=1), (a, b),
                          lambda gr: (gr[:, :ca], gr[:, ca:]))


def flatten(x: Tensor) -> Tensor:
    return x.reshape(x.shape[0], -1)


def l2_normalize(x: Tensor, axis: int, eps: float = 1e-12) -> Tensor:
    """``x / sqrt(|x|^2 + eps)`` along ``axis``."""
    xd = x.data
    norm = np.sqrt((xd * xd).sum(axis=axis, keepdims=True) + eps)
    y = xd / norm

    def backward(gr):
        return ((gr - y * (gr * y).sum(axis=axis, keepdims=True)) / norm,)

    return x.graph.record(y, (x,), backward)


def as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=DTYPE)
