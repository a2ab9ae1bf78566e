"""Differentiable primitives.

Images are NHWC, features are NxF. Only the broadcasting the networks and
RL losses need is supported: elementwise ops accept NumPy-style broadcast
operands and reduce gradients back to the operand shape.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Sequence

import numpy as np

from . import kernels
from .tensor import ConfigurationError, Tensor, accumulate, as_tensor, make_result


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _const(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a = _const(a, b if isinstance(b, Tensor) else None)
    b = _const(b, a)
    out = a.data + b.data

    def _backward(g):
        accumulate(a, _unbroadcast(g, a.shape))
        accumulate(b, _unbroadcast(g, b.shape))

    return make_result(out, (a, b), _backward)


def sub(a, b) -> Tensor:
    a = _const(a, b if isinstance(b, Tensor) else None)
    b = _const(b, a)
    out = a.data - b.data

    def _backward(g):
        accumulate(a, _unbroadcast(g, a.shape))
        accumulate(b, _unbroadcast(-g, b.shape))

    return make_result(out, (a, b), _backward)


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        # scalar constant: cheaper closure, no second parent
        c = float(b)
        a = as_tensor(a)
        return make_result(a.data * a.data.dtype.type(c), (a,), lambda g: accumulate(a, g * c))
    a = _const(a, b)
    out = a.data * b.data

    def _backward(g):
        if a.requires_grad:
            accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            accumulate(b, _unbroadcast(g * a.data, b.shape))

    return make_result(out, (a, b), _backward)


def add_n(xs: Sequence[Tensor]) -> Tensor:
    """Sum of equally shaped tensors as a single node."""
    if len(xs) == 1:
        return xs[0]
    out = xs[0].data.copy()
    for x in xs[1:]:
        if x.shape != out.shape:
            raise ConfigurationError(f"add_n shape mismatch {x.shape} vs {out.shape}")
        out += x.data

    def _backward(g):
        for x in xs:
            accumulate(x, g)

    return make_result(out, tuple(xs), _backward)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return make_result(out, (x,), lambda g: accumulate(x, g * out))


def log(x: Tensor) -> Tensor:
    return make_result(np.log(x.data), (x,), lambda g: accumulate(x, g / x.data))


def square(x: Tensor) -> Tensor:
    return make_result(x.data * x.data, (x,), lambda g: accumulate(x, 2.0 * g * x.data))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    # relu'(0) = 0
    return make_result(x.data * mask, (x,), lambda g: accumulate(x, g * mask))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return make_result(out, (x,), lambda g: accumulate(x, g * (1.0 - out * out)))


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "tanh":
        return tanh(x)
    if kind == "identity":
        return x
    raise ConfigurationError(f"unknown activation {kind!r}")


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; ties route the gradient to ``a``."""
    pick_a = a.data <= b.data
    out = np.where(pick_a, a.data, b.data)

    def _backward(g):
        accumulate(a, _unbroadcast(g * pick_a, a.shape))
        accumulate(b, _unbroadcast(g * ~pick_a, b.shape))

    return make_result(out, (a, b), _backward)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    return make_result(np.clip(x.data, lo, hi), (x,), lambda g: accumulate(x, g * inside))


def huber(x: Tensor, delta: float = 1.0) -> Tensor:
    ax = np.abs(x.data)
    quad = ax <= delta
    out = np.where(quad, 0.5 * x.data * x.data, delta * (ax - 0.5 * delta))
    return make_result(
        out, (x,), lambda g: accumulate(x, g * np.where(quad, x.data, delta * np.sign(x.data)))
    )


# ----------------------------------------------------------------- reductions

def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    out = np.asarray(x.data.sum(axis=axis))

    def _backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        accumulate(x, np.broadcast_to(g, x.shape).copy())

    return make_result(out, (x,), _backward)


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis), 1.0 / float(n))


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return make_result(x.data.reshape(shape), (x,), lambda g: accumulate(x, g.reshape(x.shape)))


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    out = np.concatenate([x.data for x in xs], axis=axis)
    sizes = [x.shape[axis] for x in xs]
    bounds = np.cumsum(sizes)[:-1]

    def _backward(g):
        for x, part in zip(xs, np.split(g, bounds, axis=axis)):
            accumulate(x, np.ascontiguousarray(part))

    return make_result(out, tuple(xs), _backward)


def split(x: Tensor, sizes: Sequence[int], axis: int = -1) -> list[Tensor]:
    """Split along ``axis``; the pieces share one gradient buffer for ``x``."""
    axis = axis % x.ndim
    bounds = np.cumsum([0] + list(sizes))
    if bounds[-1] != x.shape[axis]:
        raise ConfigurationError(f"split sizes {list(sizes)} do not cover axis of length {x.shape[axis]}")
    buf = {}
    outs = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        index = (slice(None),) * axis + (slice(lo, hi),)

        def _backward(g, index=index):
            if not x.requires_grad:
                return
            # x.grad may have been replaced or may alias another node's
            # gradient; take ownership before writing in place.
            if x.grad is None or x.grad is not buf.get("g"):
                x.grad = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
                buf["g"] = x.grad
            buf["g"][index] += g

        outs.append(make_result(x.data[index], (x,), _backward))
    return outs


def take_along(x: Tensor, index: np.ndarray) -> Tensor:
    """Row-wise gather: ``x[n, index[n]]`` for a 2-D ``x``."""
    index = np.asarray(index, dtype=np.int64)
    rows = np.arange(x.shape[0])
    out = x.data[rows, index]

    def _backward(g):
        full = np.zeros_like(x.data)
        full[rows, index] = g
        accumulate(x, full)

    return make_result(out, (x,), _backward)


# -------------------------------------------------------------------- dense

def affine(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ConfigurationError(f"affine shape mismatch: x{x.shape} @ W{w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ConfigurationError(f"affine bias shape {b.shape} != ({w.shape[1]},)")
    out = x.data @ w.data
    if b is not None:
        out += b.data
    parents = (x, w) if b is None else (x, w, b)

    def _backward(g):
        if x.requires_grad:
            accumulate(x, g @ w.data.T)
        if w.requires_grad:
            accumulate(w, x.data.T @ g)
        if b is not None:
            accumulate(b, g.sum(axis=0))

    return make_result(out, parents, _backward)


# ------------------------------------------------------------------ softmax

def softmax(x: Tensor, temperature: float = 1.0, axis: int = -1) -> Tensor:
    """softmax(x / temperature) along ``axis`` with max-subtraction."""
    if not temperature > 0:
        raise ConfigurationError(f"temperature must be > 0, got {temperature}")
    z = x.data / temperature
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def _backward(g):
        dz = p * (g - (g * p).sum(axis=axis, keepdims=True))
        accumulate(x, dz / temperature)

    return make_result(p, (x,), _backward)


def softmax_vec(logits: Tensor, temperature: float = 1.0) -> Tensor:
    if logits.ndim != 1:
        raise ConfigurationError(f"softmax_vec expects a vector, got shape {logits.shape}")
    return softmax(logits, temperature, axis=0)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def _backward(g):
        accumulate(x, g - p * g.sum(axis=axis, keepdims=True))

    return make_result(out, (x,), _backward)


def mix(outputs: Sequence[Tensor | None], probs: Tensor) -> Tensor:
    """Probability-weighted sum ``sum_k probs[k] * outputs[k]``.

    ``None`` entries stand for the Zero op: they contribute nothing to the
    output and their weight receives zero gradient.
    """
    live = [(k, o) for k, o in enumerate(outputs) if o is not None]
    if len(outputs) != probs.shape[0]:
        raise ConfigurationError(f"{len(outputs)} op outputs vs {probs.shape[0]} weights")
    if not live:
        raise ConfigurationError("mix needs at least one non-Zero output")
    shape = live[0][1].shape
    pw = probs.data
    out = np.zeros(shape, dtype=live[0][1].data.dtype)
    for k, o in live:
        if o.shape != shape:
            raise ConfigurationError(f"mixed op shapes differ: {o.shape} vs {shape}")
        out += pw[k] * o.data

    def _backward(g):
        if probs.requires_grad:
            gp = np.zeros_like(pw)
            for k, o in live:
                gp[k] = np.vdot(g, o.data)
            accumulate(probs, gp)
        for k, o in live:
            if o.requires_grad:
                accumulate(o, g * pw[k])

    return make_result(out, (probs,) + tuple(o for _, o in live), _backward)


# ------------------------------------------------------------- convolution

def same_padding(size: int, kernel: int, stride: int, dilation: int = 1) -> tuple[int, int, int]:
    """Output size and (before, after) zero padding for SAME convolution."""
    eff = (kernel - 1) * dilation + 1
    out = -(-size // stride)
    total = max((out - 1) * stride + eff - size, 0)
    return out, total // 2, total - total // 2


def _pad(x: np.ndarray, pt, pb, pl, pr, value=0.0) -> np.ndarray:
    if pt == pb == pl == pr == 0:
        return np.ascontiguousarray(x)
    n, h, w, c = x.shape
    out = np.full((n, h + pt + pb, w + pl + pr, c), value, dtype=x.dtype)
    out[:, pt:pt + h, pl:pl + w, :] = x
    return out


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, dilation: int = 1,
           bias: Tensor | None = None) -> Tensor:
    """SAME-padded cross-correlation, NHWC input, (kh, kw, Cin, Cout) kernel."""
    if stride not in (1, 2) or dilation not in (1, 2):
        raise ConfigurationError(f"stride/dilation must be 1 or 2, got {stride}/{dilation}")
    if x.ndim != 4 or kernel.ndim != 4 or x.shape[3] != kernel.shape[2]:
        raise ConfigurationError(f"conv2d shape mismatch: x{x.shape} kernel{kernel.shape}")
    n, h, w, cin = x.shape
    kh, kw, _, cout = kernel.shape
    if bias is not None and bias.shape != (cout,):
        raise ConfigurationError(f"conv2d bias shape {bias.shape} != ({cout},)")
    k2 = kernel.data.reshape(kh * kw * cin, cout)

    if kh == kw == 1 and stride == 1:
        x2 = x.data.reshape(-1, cin)
        out = (x2 @ k2).reshape(n, h, w, cout)
        if bias is not None:
            out += bias.data

        def _backward_1x1(g):
            g2 = g.reshape(-1, cout)
            if x.requires_grad:
                accumulate(x, (g2 @ k2.T).reshape(x.shape))
            if kernel.requires_grad:
                accumulate(kernel, (x2.T @ g2).reshape(kernel.shape))
            if bias is not None:
                accumulate(bias, g2.sum(axis=0))

        parents = (x, kernel) if bias is None else (x, kernel, bias)
        return make_result(out, parents, _backward_1x1)

    oh, pt, pb = same_padding(h, kh, stride, dilation)
    ow, pl, pr = same_padding(w, kw, stride, dilation)
    xp = _pad(x.data, pt, pb, pl, pr)
    cols = kernels.im2col(xp, kh, kw, stride, dilation, oh, ow)
    cols2 = cols.reshape(n * oh * ow, kh * kw * cin)
    out = (cols2 @ k2).reshape(n, oh, ow, cout)
    if bias is not None:
        out += bias.data
    hp, wp = xp.shape[1], xp.shape[2]

    def _backward(g):
        g2 = g.reshape(-1, cout)
        if kernel.requires_grad:
            accumulate(kernel, (cols2.T @ g2).reshape(kernel.shape))
        if bias is not None:
            accumulate(bias, g2.sum(axis=0))
        if x.requires_grad:
            dcols = (g2 @ k2.T).reshape(n, oh, ow, kh, kw, cin)
            dxp = kernels.col2im(dcols, hp, wp, stride, dilation)
            accumulate(x, dxp[:, pt:pt + h, pl:pl + w, :])

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return make_result(out, parents, _backward)


def conv2d_shared(x: Tensor, kernels: Sequence[Tensor], biases: Sequence[Tensor],
                  stride: int = 1, dilation: int = 1) -> list[Tensor]:
    """Several same-shaped convolutions of one input, run as one wide conv.

    Patch extraction happens once and the matmul sees all output channels.
    """
    if len(kernels) == 1:
        return [conv2d(x, kernels[0], stride, dilation, bias=biases[0])]
    y = conv2d(x, concat(kernels, axis=3), stride, dilation, bias=concat(biases, axis=0))
    return split(y, [k.shape[3] for k in kernels], axis=-1)


def _window_slices(window: int, stride: int, oh: int, ow: int):
    """Index tuples selecting, per window offset, the strided input view."""
    for dy in range(window):
        for dx in range(window):
            yield (slice(None), slice(dy, dy + stride * (oh - 1) + 1, stride),
                   slice(dx, dx + stride * (ow - 1) + 1, stride), slice(None))


@lru_cache(maxsize=64)
def _avg_counts(h, w, window, stride, dtype_name):
    oh, pt, pb = same_padding(h, window, stride)
    ow, pl, pr = same_padding(w, window, stride)
    ones = _pad(np.ones((1, h, w, 1), dtype=dtype_name), pt, pb, pl, pr)
    counts = np.zeros((1, oh, ow, 1), dtype=dtype_name)
    for sl in _window_slices(window, stride, oh, ow):
        counts += ones[sl]
    return counts


def pool2d(x: Tensor, kind: str, window: int = 3, stride: int = 1) -> Tensor:
    """SAME-padded max/avg pooling. Avg divides by the in-bounds count.

    Works on strided views of the padded input, one per window offset, so
    no patch matrix is materialised.
    """
    if kind not in ("max", "avg"):
        raise ConfigurationError(f"unknown pool kind {kind!r}")
    if stride not in (1, 2) or x.ndim != 4:
        raise ConfigurationError(f"bad pool arguments: stride={stride}, x{x.shape}")
    n, h, w, c = x.shape
    oh, pt, pb = same_padding(h, window, stride)
    ow, pl, pr = same_padding(w, window, stride)
    fill = -np.inf if kind == "max" else 0.0
    xp = _pad(x.data, pt, pb, pl, pr, value=fill)
    slices = list(_window_slices(window, stride, oh, ow))

    if kind == "max":
        out = xp[slices[0]].copy()
        for sl in slices[1:]:
            np.maximum(out, xp[sl], out=out)

        def _backward(g):
            # ties route to the first maximal cell in row-major window order
            dxp = np.zeros_like(xp)
            taken = np.zeros(out.shape, dtype=bool)
            for sl in slices:
                hit = xp[sl] == out
                hit &= ~taken
                taken |= hit
                dxp[sl] += g * hit
            accumulate(x, dxp[:, pt:pt + h, pl:pl + w, :])

        return make_result(out, (x,), _backward)

    counts = _avg_counts(h, w, window, stride, x.data.dtype.name)
    out = np.zeros((n, oh, ow, c), dtype=x.data.dtype)
    for sl in slices:
        out += xp[sl]
    out /= counts

    def _backward_avg(g):
        share = g / counts
        dxp = np.zeros_like(xp)
        for sl in slices:
            dxp[sl] += share
        accumulate(x, dxp[:, pt:pt + h, pl:pl + w, :])

    return make_result(out, (x,), _backward_avg)


def subsample(x: Tensor, stride: int = 2) -> Tensor:
    """Strided identity: keeps every ``stride``-th pixel, output ceil(H/stride)."""
    if stride == 1:
        return x
    out = np.ascontiguousarray(x.data[:, ::stride, ::stride, :])

    def _backward(g):
        full = np.zeros_like(x.data)
        full[:, ::stride, ::stride, :] = g
        accumulate(x, full)

    return make_result(out, (x,), _backward)


def zeros(shape, like: Tensor) -> Tensor:
    return Tensor(np.zeros(shape, dtype=like.data.dtype))


def entropy_from_logits(logits: Tensor) -> Tensor:
    """Per-row categorical entropy, built from differentiable primitives."""
    logp = log_softmax(logits)
    p = exp(logp)
    return mul(sum(mul(p, logp), axis=-1), -1.0)

