#!/usr/bin/env python3
"""Benchmark the JIT-compiled kernels against the pure-numpy fallback.

The fallback is what runs when OCBNN_NO_NUMBA=1 (or numba is missing); the
compiled path is the default. Workloads mirror the two regimes that dominate
experiment runtime: many tiny batches (MCMC on the 1-D simulations) and
fewer large batches (minibatched tabular inference).
"""

import time

import numpy as np

from ocbnn import kernels


def bench(fn, args, repeat):
    fn(*args)  # warm up (and trigger compilation for the jitted path)
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat


def make_case(sizes, n_rows, seed=0):
    sizes = np.asarray(sizes, dtype=np.int64)
    rng = np.random.default_rng(seed)
    m = kernels.param_count(sizes)
    w = rng.normal(size=m)
    x = rng.normal(size=(n_rows, sizes[0]))
    og = rng.normal(size=(n_rows, sizes[-1]))
    return sizes, w, x, og


CASES = [
    ("1d sim, 40-row batch", (1, 10, 1), 40, 20000),
    ("tabular, 512-row batch", (9, 64, 1), 512, 2000),
    ("wide tabular, 256-row batch", (8, 150, 150, 2), 256, 200),
]


def main():
    if not kernels.NUMBA_ENABLED:
        print("numba is disabled (OCBNN_NO_NUMBA set or not installed); "
              "only the numpy path is available.\n")
    print(f"{'workload':<30} {'kernel':<10} {'numpy':>12} {'jitted':>12} {'speedup':>9}")
    for label, sizes, n_rows, repeat in CASES:
        sizes, w, x, og = make_case(sizes, n_rows)
        for name, py_fn, jit_fn, args in (
            ("forward", kernels.py_forward_batch, kernels.forward_batch, (w, sizes, x)),
            ("vjp", kernels.py_vjp_batch, kernels.vjp_batch, (w, sizes, x, og)),
        ):
            t_py = bench(py_fn, args, max(repeat // 10, 10))
            if kernels.NUMBA_ENABLED:
                t_jit = bench(jit_fn, args, repeat)
                print(f"{label:<30} {name:<10} {t_py * 1e6:>10.1f}us "
                      f"{t_jit * 1e6:>10.1f}us {t_py / t_jit:>8.1f}x")
            else:
                print(f"{label:<30} {name:<10} {t_py * 1e6:>10.1f}us {'-':>12} {'-':>9}")

    # single-point Hessian-vector product (amortized-prior optimization)
    sizes, w, x, _ = make_case((9, 64, 1), 1, seed=1)
    u = np.random.default_rng(2).normal(size=w.size)
    args = (w, sizes, x[0], u)
    t_py = bench(kernels.py_hvp_single, args, 500)
    if kernels.NUMBA_ENABLED:
        t_jit = bench(kernels.hvp_single, args, 5000)
        print(f"{'single-point hvp':<30} {'hvp':<10} {t_py * 1e6:>10.1f}us "
              f"{t_jit * 1e6:>10.1f}us {t_py / t_jit:>8.1f}x")
    else:
        print(f"{'single-point hvp':<30} {'hvp':<10} {t_py * 1e6:>10.1f}us {'-':>12} {'-':>9}")


if __name__ == "__main__":
    main()
