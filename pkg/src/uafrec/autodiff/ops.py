"""Differentiable operations.

Each op computes its forward value with numpy and, when any input requires
gradients, records a closure mapping the output gradient to one gradient per
input (``None`` for inputs that need none).
"""

from __future__ import annotations

import numpy as np

from .. import _ext
from .tensor import ShapeError, Tensor

__all__ = [
    "add", "sub", "mul", "neg", "matmul", "relu", "sigmoid", "log_sigmoid",
    "exp", "log", "softmax", "log_softmax", "layer_norm", "causal_conv1d",
    "embedding", "sum", "mean", "index", "gather", "reshape",
    "straight_through", "stop_gradient", "cross_entropy", "forward_op",
]


def _pair(a, b):
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(b, dtype=a.dtype)
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(a, dtype=b.dtype)
    elif not isinstance(a, Tensor):
        a, b = Tensor(a), Tensor(b)
    return a, b


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    ndiff = g.ndim - len(shape)
    if ndiff > 0:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# -- elementwise -----------------------------------------------------------------

def add(a, b):
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._from_op(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "mul")

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(a.data * b.data, (a, b), backward, "mul")


def neg(a):
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,), "neg")


def relu(a):
    mask = a.data > 0
    return Tensor._from_op(np.maximum(a.data, 0), (a,), lambda g: (g * mask,), "relu")


def _sigmoid_np(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    s = _sigmoid_np(a.data)
    return Tensor._from_op(s, (a,), lambda g: (g * s * (1 - s),), "sigmoid")


def log_sigmoid(a):
    """``log(sigmoid(x)) = -softplus(-x)`` computed without overflow."""
    x = a.data
    out = np.minimum(x, 0) - np.log1p(np.exp(-np.abs(x)))

    def backward(g):
        return (g * _sigmoid_np(-x),)

    return Tensor._from_op(out.astype(x.dtype, copy=False), (a,), backward, "log_sigmoid")


def exp(a):
    e = np.exp(a.data)
    return Tensor._from_op(e, (a,), lambda g: (g * e,), "exp")


def log(a):
    if np.any(a.data <= 0):
        from .tensor import NonFiniteError
        raise NonFiniteError("log of a non-positive value")
    x = a.data
    return Tensor._from_op(np.log(x), (a,), lambda g: (g / x,), "log")


def softmax(a, axis=-1):
    x = a.data
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - np.sum(g * s, axis=axis, keepdims=True)),)

    return Tensor._from_op(s, (a,), backward, "softmax")


def log_softmax(a, axis=-1):
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(out, (a,), backward, "log_softmax")


# -- linear algebra ----------------------------------------------------------------

def matmul(a, w):
    """``a[..., m] @ w[m, p]``."""
    a, w = _pair(a, w)
    if w.ndim != 2 or a.shape[-1] != w.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {w.shape}")
    out = a.data @ w.data

    def backward(g):
        ga = g @ w.data.T if a.requires_grad else None
        gw = None
        if w.requires_grad:
            m, p = w.shape
            gw = a.data.reshape(-1, m).T @ g.reshape(-1, p)
        return ga, gw

    return Tensor._from_op(out, (a, w), backward, "matmul")


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize over the last (feature) axis, then apply gain and bias."""
    c = x.shape[-1]
    if gain.shape != (c,) or bias.shape != (c,):
        raise ShapeError(f"layer_norm: features {c}, gain {gain.shape}, bias {bias.shape}")
    lead = x.shape[:-1]
    dt = x.dtype
    x2 = np.ascontiguousarray(x.data.reshape(-1, c))
    gd = np.ascontiguousarray(gain.data, dtype=dt)
    y, xhat, rstd = _ext.layer_norm_forward(x2, gd, np.ascontiguousarray(bias.data, dtype=dt), eps)

    def backward(g):
        gx, gg, gb = _ext.layer_norm_backward(
            np.ascontiguousarray(g.reshape(-1, c), dtype=dt), xhat, rstd, gd)
        return gx.reshape(x.shape), gg.astype(gain.dtype, copy=False), gb.astype(bias.dtype, copy=False)

    return Tensor._from_op(y.reshape(*lead, c), (x, gain, bias), backward, "layer_norm")


def causal_conv1d(x, weight, bias, dilation):
    """Dilated causal 1-D convolution.

    ``x`` is ``[B, n, c_in]`` (or ``[n, c_in]``), ``weight`` is
    ``[K, c_in, c_out]``. Output position ``t`` reads inputs
    ``t, t - d, ..., t - (K-1) d``; the last kernel tap is the current position.
    """
    if dilation < 1:
        raise ShapeError(f"dilation must be >= 1, got {dilation}")
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3 or weight.ndim != 3 or weight.shape[1] != xd.shape[2]:
        raise ShapeError(f"causal_conv1d: x {x.shape}, weight {weight.shape}")
    K, cin, cout = weight.shape
    if bias.shape != (cout,):
        raise ShapeError(f"causal_conv1d: bias {bias.shape} for {cout} outputs")
    B, n, _ = xd.shape
    cols = _ext.causal_im2col(np.ascontiguousarray(xd), K, dilation)
    wmat = weight.data.reshape(K * cin, cout)
    out = (cols.reshape(B * n, K * cin) @ wmat + bias.data).reshape(B, n, cout)

    def backward(g):
        g3 = g[None] if squeeze else g
        g2 = g3.reshape(B * n, cout)
        gx = gw = gb = None
        if x.requires_grad:
            gcols = (g2 @ wmat.T).reshape(B, n, K * cin)
            gx = _ext.causal_col2im(gcols, K, dilation)
            if squeeze:
                gx = gx[0]
        if weight.requires_grad:
            gw = (cols.reshape(B * n, K * cin).T @ g2).reshape(K, cin, cout)
        if bias.requires_grad:
            gb = g2.sum(axis=0)
        return gx, gw, gb

    return Tensor._from_op(out[0] if squeeze else out, (x, weight, bias), backward, "causal_conv1d")


def embedding(table, ids):
    """Row lookup ``table[ids]`` for an integer array of any shape."""
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise TypeError("embedding ids must be integers")
    V = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= V):
        raise IndexError(f"item id outside [0, {V})")
    out = table.data[ids]

    def backward(g):
        flat = np.ascontiguousarray(ids.reshape(-1).astype(np.int64))
        return (_ext.embedding_backward(flat, np.ascontiguousarray(g.reshape(flat.size, -1)), V),)

    return Tensor._from_op(out, (table,), backward, "embedding")


# -- reductions and indexing -------------------------------------------------------

def sum(a, axis=None):
    out = np.sum(a.data, axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._from_op(np.asarray(out, dtype=a.dtype), (a,), backward, "sum")


def mean(a, axis=None):
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis), 1.0 / float(count))


def index(a, idx):
    out = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor._from_op(np.array(out, order="C"), (a,), backward, "index")


def gather(a, idx, axis=-1):
    """``np.take_along_axis`` with a gradient; ``idx`` has ``a``'s rank."""
    idx = np.asarray(idx)
    out = np.take_along_axis(a.data, idx, axis=axis)

    def backward(g):
        full = np.zeros_like(a.data)
        # duplicate indices along the axis must accumulate
        ax = axis % a.ndim
        grids = list(np.indices(idx.shape, sparse=True))
        grids[ax] = idx
        np.add.at(full, tuple(grids), g)
        return (full,)

    return Tensor._from_op(out, (a,), backward, "gather")


def reshape(a, shape):
    out = a.data.reshape(shape)
    return Tensor._from_op(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def stop_gradient(a):
    return Tensor(a.data, requires_grad=False)


def straight_through(hard, soft):
    """Forward value ``hard``; gradient routed to ``soft`` unchanged."""
    hard = np.asarray(hard.data if isinstance(hard, Tensor) else hard, dtype=soft.dtype)
    if hard.shape != soft.shape:
        raise ShapeError(f"straight_through: {hard.shape} vs {soft.shape}")
    return Tensor._from_op(hard.copy(), (soft,), lambda g: (g,), "straight_through")


def cross_entropy(logits, targets, weights=None):
    """Per-row negative log-likelihood ``-log softmax(logits)[target]``.

    ``logits`` is ``[..., V]``; ``targets`` is an integer array of the
    leading shape. Rows are multiplied by ``weights`` (e.g. a padding mask).
    """
    x = logits.data
    targets = np.asarray(targets)
    if targets.shape != x.shape[:-1]:
        raise ShapeError(f"cross_entropy: targets {targets.shape} vs logits {x.shape}")
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    s = e.sum(axis=-1, keepdims=True)
    lse = (m + np.log(s))[..., 0]
    picked = np.take_along_axis(x, targets[..., None], axis=-1)[..., 0]
    loss = lse - picked
    w = None
    if weights is not None:
        w = np.asarray(weights, dtype=x.dtype)
        loss = loss * w

    def backward(g):
        gl = g if w is None else g * w
        probs = e / s
        np.put_along_axis(probs, targets[..., None],
                          np.take_along_axis(probs, targets[..., None], axis=-1) - 1, axis=-1)
        return (probs * gl[..., None],)

    return Tensor._from_op(loss.astype(x.dtype, copy=False), (logits,), backward, "cross_entropy")


_REGISTRY = {
    "add": add, "sub": sub, "mul": mul, "neg": neg, "matmul": matmul,
    "relu": relu, "sigmoid": sigmoid, "log_sigmoid": log_sigmoid, "exp": exp,
    "log": log, "softmax": softmax, "log_softmax": log_softmax,
    "layer_norm": layer_norm, "causal_conv1d": causal_conv1d,
    "embedding": embedding, "sum": sum, "mean": mean, "index": index,
    "gather": gather, "reshape": reshape, "straight_through": straight_through,
    "cross_entropy": cross_entropy,
}


def forward_op(kind, *inputs, **attrs):
    """Apply the op registered under ``kind`` (e.g. ``"relu"``)."""
    try:
        fn = _REGISTRY[kind]
    except KeyError:
        raise ValueError(f"unknown op {kind!r}") from None
    return fn(*inputs, **attrs)
