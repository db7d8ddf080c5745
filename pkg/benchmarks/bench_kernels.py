"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--batch 32]

Both backends are also checked for bit-identical results on the same inputs.
"""
import argparse
import timeit

import numpy as np

from learned_resizer import kernels
from learned_resizer.tensor import bilinear_plan


def cases(batch):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((batch, 16, 32, 32)).astype(np.float32)
    cols = rng.standard_normal((16 * 9, batch * 32 * 32)).astype(np.float32)
    down = bilinear_plan(32, 32, 16, 16)
    g = rng.standard_normal((batch, 16, 16, 16)).astype(np.float32)
    return {
        "im2col 3x3": lambda m: m.im2col(x, 3, 3, 1, 1, 32, 32),
        "col2im 3x3": lambda m: m.col2im(cols, x.shape, 3, 3, 1, 1, 32, 32),
        "bilinear fwd 32->16": lambda m: m.bilinear_forward(x, *down),
        "bilinear bwd 32->16": lambda m: m.bilinear_backward(g, 32, 32, *down),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--batch", type=int, default=32)
    args = ap.parse_args(argv)
    py = kernels.backend_module("python")
    try:
        cy = kernels.backend_module("cython")
    except ImportError:
        print("compiled extension not built; only the numpy backend is available")
        cy = None
    print(f"active backend: {kernels.BACKEND}; batch {args.batch}, 16 channels, 32x32")
    print(f"{'kernel':22s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s} identical")
    for name, fn in cases(args.batch).items():
        t_py = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat)) * 1e3
        if cy is None:
            print(f"{name:22s} {t_py:10.2f}")
            continue
        t_cy = min(timeit.repeat(lambda: fn(cy), number=1, repeat=args.repeat)) * 1e3
        same = np.array_equal(fn(py), fn(cy))
        print(f"{name:22s} {t_py:10.2f} {t_cy:10.2f} {t_py / t_cy:7.1f}x {same}")


if __name__ == "__main__":
    main()
