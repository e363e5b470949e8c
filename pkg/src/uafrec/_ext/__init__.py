"""Numerical kernels with a compiled fast path.

The compiled ``_kernels`` module is used when it was built; otherwise the
numpy versions in ``_kernels_py`` are used. Set ``UAFREC_PURE_PYTHON=1`` to
force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("UAFREC_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "compiled"

causal_im2col = _impl.causal_im2col
causal_col2im = _impl.causal_col2im
layer_norm_forward = _impl.layer_norm_forward
layer_norm_backward = _impl.layer_norm_backward
embedding_backward = _impl.embedding_backward

__all__ = [
    "BACKEND",
    "causal_im2col",
    "causal_col2im",
    "layer_norm_forward",
    "layer_norm_backward",
    "embedding_backward",
]
