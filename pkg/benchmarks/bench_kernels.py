"""Time the compiled kernels against the pure-numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 50]
"""

import argparse
import timeit

import numpy as np

from uafrec._ext import _kernels_py as py

try:
    from uafrec._ext import _kernels as cy
except ImportError:
    cy = None


def cases(rng):
    x = rng.standard_normal((256, 20, 64)).astype(np.float32)
    cols = rng.standard_normal((256, 20, 192)).astype(np.float32)
    x2 = x.reshape(-1, 64)
    gain = np.ones(64, np.float32)
    bias = np.zeros(64, np.float32)
    y, xhat, rstd = py.layer_norm_forward(x2, gain, bias, 1e-5)
    ids = rng.integers(0, 1000, size=x2.shape[0]).astype(np.int64)
    return {
        "causal_im2col": lambda m: m.causal_im2col(x, 3, 4),
        "causal_col2im": lambda m: m.causal_col2im(cols, 3, 4),
        "layer_norm_forward": lambda m: m.layer_norm_forward(x2, gain, bias, 1e-5),
        "layer_norm_backward": lambda m: m.layer_norm_backward(x2, xhat, rstd, gain),
        "embedding_backward": lambda m: m.embedding_backward(ids, x2, 1000),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':22s} {'python ms':>10s} {'compiled ms':>12s} {'speedup':>8s}")
    for name, fn in cases(rng).items():
        tp = timeit.timeit(lambda: fn(py), number=args.repeat) / args.repeat * 1e3
        if cy is None:
            print(f"{name:22s} {tp:10.3f} {'n/a':>12s}")
            continue
        tc = timeit.timeit(lambda: fn(cy), number=args.repeat) / args.repeat * 1e3
        print(f"{name:22s} {tp:10.3f} {tc:12.3f} {tp / tc:7.2f}x")


if __name__ == "__main__":
    main()
