"""Pure-numpy reference versions of the hot kernels.

Every function here has a twin with the same signature in the compiled
``_kernels`` extension. The two must agree to within float rounding; the
test-suite checks that whenever the extension is importable.
"""

import numpy as np


def causal_im2col(x, kernel, dilation):
    """Stack the dilated causal taps of ``x`` along the channel axis.

    ``x`` is ``[B, n, c]``. Tap ``j`` of the result reads position
    ``t - (kernel - 1 - j) * dilation`` (zero when it falls before the start),
    so the last tap is the current position.
    """
    B, n, c = x.shape
    cols = np.zeros((B, n, kernel * c), dtype=x.dtype)
    for j in range(kernel):
        shift = (kernel - 1 - j) * dilation
        if shift >= n:
            continue
        cols[:, shift:, j * c:(j + 1) * c] = x[:, :n - shift, :]
    return cols


def causal_col2im(gcols, kernel, dilation):
    B, n, kc = gcols.shape
    c = kc // kernel
    gx = np.zeros((B, n, c), dtype=gcols.dtype)
    for j in range(kernel):
        shift = (kernel - 1 - j) * dilation
        if shift >= n:
            continue
        gx[:, :n - shift, :] += gcols[:, shift:, j * c:(j + 1) * c]
    return gx


def layer_norm_forward(x, gain, bias, eps):
    """Normalize the rows of a 2-D array; returns ``(y, xhat, rstd)``."""
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    y = xhat * gain + bias
    return y, xhat, rstd.reshape(-1)


def layer_norm_backward(g, xhat, rstd, gain):
    ggain = np.sum(g * xhat, axis=0)
    gbias = np.sum(g, axis=0)
    gxhat = g * gain
    m1 = gxhat.mean(axis=1, keepdims=True)
    m2 = np.mean(gxhat * xhat, axis=1, keepdims=True)
    gx = (gxhat - m1 - xhat * m2) * rstd[:, None]
    return gx, ggain, gbias


def embedding_backward(ids, g, vocab):
    """Scatter-add rows of ``g`` into a ``[vocab, c]`` gradient table."""
    out = np.zeros((vocab, g.shape[1]), dtype=g.dtype)
    np.add.at(out, ids, g)
    return out
