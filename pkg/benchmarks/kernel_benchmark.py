"""Times the numba-jitted kernels against their pure-numpy twins.

Usage: python benchmarks/kernel_benchmark.py [--rows N] [--cols N] [--reps N]

Matrix products are excluded on purpose: both backends run them through
numpy's BLAS. What differs is the fused elementwise / row-reduction work
(gelu, softmax, layernorm, Adam), where numba avoids numpy's temporaries.
"""

import argparse
import time

import numpy as np

from varformer.kernels import numpy_backend

try:
    from varformer.kernels import numba_backend
except ImportError:
    numba_backend = None


def bench(fn, reps):
    fn()  # warm-up (and JIT compile for numba)
    t0 = time.perf_counter()
    for _ in range(reps):
        fn()
    return (time.perf_counter() - t0) / reps


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rows", type=int, default=2048)
    ap.add_argument("--cols", type=int, default=256)
    ap.add_argument("--reps", type=int, default=50)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    x = rng.standard_normal((args.rows, args.cols))
    gy = rng.standard_normal((args.rows, args.cols))
    gain = rng.uniform(0.5, 1.5, args.cols)
    bias = rng.uniform(-0.5, 0.5, args.cols)
    y = numpy_backend.softmax_rows(x)
    _, xhat, rstd = numpy_backend.layernorm_rows(x, gain, bias, 1e-5)
    p = rng.standard_normal(x.size)
    g = rng.standard_normal(x.size)
    m = np.zeros_like(p)
    v = np.zeros_like(p)

    cases = [
        ("gelu_forward", lambda b: b.gelu_forward(x)),
        ("gelu_backward", lambda b: b.gelu_backward(x, gy)),
        ("softmax_rows", lambda b: b.softmax_rows(x)),
        ("softmax_rows_backward", lambda b: b.softmax_rows_backward(y, gy)),
        ("layernorm_rows", lambda b: b.layernorm_rows(x, gain, bias, 1e-5)),
        ("layernorm_rows_backward",
         lambda b: b.layernorm_rows_backward(xhat, rstd, gain, gy)),
        ("sq_diff_mean", lambda b: b.sq_diff_mean(x, gy)),
        ("adam_update",
         lambda b: b.adam_update(p, g, m, v, 1, 1e-3, 0.9, 0.999, 1e-8)),
    ]

    print(f"array {args.rows}x{args.cols}, {args.reps} reps, times in µs")
    header = f"{'kernel':26s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}"
    print(header)
    print("-" * len(header))
    for name, call in cases:
        t_np = bench(lambda: call(numpy_backend), args.reps) * 1e6
        if numba_backend is None:
            print(f"{name:26s} {t_np:10.1f} {'n/a':>10s} {'n/a':>8s}")
            continue
        t_nb = bench(lambda: call(numba_backend), args.reps) * 1e6
        print(f"{name:26s} {t_np:10.1f} {t_nb:10.1f} {t_np / t_nb:7.2f}x")


if __name__ == "__main__":
    main()
