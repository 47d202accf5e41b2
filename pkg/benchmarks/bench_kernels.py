"""Time the convolution backends against each other.

Runs the forward and backward kernels on shapes typical for this model
(onehot indicators, K up to 128 filters) and prints a table with the
numpy/cython speed ratio.  Usage::

    python benchmarks/bench_kernels.py [--repeats 5]

The compiled backend must be built (``pip install -e .``) or only the numpy
rows will appear.
"""

import argparse
import time

import numpy as np

from dcsf.kernels import _conv_np

try:
    from dcsf.kernels import _conv_cy
except ImportError:
    _conv_cy = None

# (B, C_in, C_out, L, k): small/medium/large encoder workloads
SHAPES = [
    (16, 4, 64, 32, 8),
    (64, 4, 64, 64, 8),
    (64, 64, 64, 64, 5),
    (128, 64, 128, 128, 8),
    (32, 128, 128, 256, 3),
]


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(repeats):
    rng = np.random.default_rng(0)
    header = f"{'shape (B,Cin,Cout,L,k)':>24} {'dir':>8} {'numpy':>10} {'cython':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for shape in SHAPES:
        B, C_in, C_out, L, k = shape
        x = rng.standard_normal((B, C_in, L))
        w = rng.standard_normal((C_out, C_in, k))
        b = rng.standard_normal(C_out)
        gy = rng.standard_normal((B, C_out, L))
        pad = k // 2

        rows = [("forward", lambda m: (lambda: m.conv1d_forward(x, w, b, pad))),
                ("backward", lambda m: (lambda: m.conv1d_backward(x, w, gy, pad)))]
        for name, make in rows:
            t_np = _time(make(_conv_np), repeats)
            if _conv_cy is None:
                print(f"{str(shape):>24} {name:>8} {t_np * 1e3:>8.2f}ms {'n/a':>10} {'n/a':>8}")
                continue
            t_cy = _time(make(_conv_cy), repeats)
            np.testing.assert_allclose(
                _conv_np.conv1d_forward(x, w, b, pad),
                _conv_cy.conv1d_forward(x, w, b, pad), rtol=1e-12, atol=1e-12)
            print(f"{str(shape):>24} {name:>8} {t_np * 1e3:>8.2f}ms "
                  f"{t_cy * 1e3:>8.2f}ms {t_np / t_cy:>7.2f}x")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5,
                        help="timing repeats; the best run counts")
    args = parser.parse_args()
    bench(args.repeats)
