"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps an ndarray. Operations on tensors that require
gradients record a node (parents + a backward closure); :meth:`Tensor.backward`
walks the recorded graph once in reverse topological order and accumulates
gradients into the leaf tensors.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class GraphConsumedError(RuntimeError):
    pass


_state = threading.local()


def _get(name, default):
    return getattr(_state, name, default)


def default_dtype():
    return _get("dtype", np.float32)


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used for newly created tensors.

    Gradient checks run under ``precision(np.float64)``.
    """
    prev = default_dtype()
    _state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = prev


def grad_enabled():
    return _get("grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def _check_finite(arr, op):
    # summing is far cheaper than isfinite().all() and still surfaces any nan/inf
    if arr.dtype.kind == "f" and not np.isfinite(arr.sum(dtype=np.float64)):
        raise NonFiniteError(f"non-finite value produced by {op}")


class Tensor:
    """Dense array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_consumed", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.kind != "f":
            arr = arr.astype(default_dtype())
        self.data = np.asarray(arr, order="C")
        _check_finite(self.data, "constructor")
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = "leaf"
        self._consumed = False
        self.name = name

    # -- construction helpers -------------------------------------------------
    @classmethod
    def _from_op(cls, data, parents, backward, op):
        out = cls.__new__(cls)
        out.data = data
        _check_finite(data, op)
        track = grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out.grad = None
        out._parents = tuple(parents) if track else ()
        out._backward = backward if track else None
        out._op = op
        out._consumed = False
        out.name = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op}{rg})"

    def __len__(self):
        return len(self.data)

    # -- backward -------------------------------------------------------------
    def backward(self):
        """Populate ``.grad`` on every reachable leaf with d(self)/d(leaf).

        Leaf gradients accumulate across calls until cleared. The recorded
        graph is released afterwards; calling again raises.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward needs a scalar root, got shape {self.shape}")
        if not self.requires_grad:
            raise RuntimeError("root does not require grad")
        if self._consumed:
            raise GraphConsumedError("graph already consumed by an earlier backward()")

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if node.is_leaf:
                if g is not None and node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            if node._consumed:
                raise GraphConsumedError("graph already consumed by an earlier backward()")
            if g is not None:
                pgrads = node._backward(g)
                for p, pg in zip(node._parents, pgrads):
                    if pg is None or not p.requires_grad:
                        continue
                    if pg.shape != p.data.shape:
                        raise ShapeError(f"{node._op}: grad shape {pg.shape} != {p.data.shape}")
                    key = id(p)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg
            node._backward = None
            node._consumed = True

    # -- operators ------------------------------------------------------------
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            raise TypeError("only division by a constant is supported")
        return ops.mul(self, 1.0 / other)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, idx):
        from . import ops
        return ops.index(self, idx)

    def sum(self, axis=None):
        from . import ops
        return ops.sum(self, axis)

    def mean(self, axis=None):
        from . import ops
        return ops.mean(self, axis)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    if dtype is None:
        arr = np.asarray(x)
        dtype = arr.dtype if arr.dtype.kind == "f" else default_dtype()
    return Tensor(x, dtype=dtype)


def parameter(data, name=None):
    return Tensor(data, requires_grad=True, name=name)
