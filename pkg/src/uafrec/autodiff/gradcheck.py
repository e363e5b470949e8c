import numpy as np

from .tensor import NonFiniteError, Tensor


def numeric_grad(f, x, h=1e-4, coords=None):
    """Central finite differences of scalar ``f()`` w.r.t. the entries of ``x``.

    ``x`` is perturbed in place and restored. ``coords`` limits the flat
    indices probed (all by default).
    """
    flat = x.data.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    out = np.zeros(flat.size, dtype=np.float64)
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f().data)
        flat[i] = orig - h
        fm = float(f().data)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"non-finite value while probing coordinate {i}")
        out[i] = (fp - fm) / (2 * h)
    return out.reshape(x.shape)


def grad_check(f, x, h=1e-4, coords=None):
    """Max over coordinates of ``|analytic - numeric| / max(1, |analytic|)``.

    ``f`` is a zero-argument callable returning a scalar :class:`Tensor` that
    depends on ``x``; ``x`` must be a float64 tensor with ``requires_grad``.
    """
    if not isinstance(x, Tensor) or x.dtype != np.float64:
        raise TypeError("grad_check needs a float64 Tensor")
    if not x.requires_grad:
        raise ValueError("x must require grad")
    x.grad = None
    y = f()
    y.backward()
    analytic = x.grad
    if analytic is None:
        analytic = np.zeros_like(x.data)
    x.grad = None
    numeric = numeric_grad(f, x, h, coords)
    a = analytic.reshape(-1)
    n = numeric.reshape(-1)
    sel = slice(None) if coords is None else np.asarray(list(coords))
    err = np.abs(a[sel] - n[sel]) / np.maximum(1.0, np.abs(a[sel]))
    return float(err.max()) if err.size else 0.0
