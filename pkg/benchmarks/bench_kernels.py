"""Benchmark: compiled RK4 sweep vs the pure-numpy fallback.

Run with `python benchmarks/bench_kernels.py`. The sweep is the hot loop of
every closed-form solve (one pass per coefficient family per m1 value), so
this is the number that matters for the verify experiments.
"""

import time

import numpy as np

from mfgkit.kernels import (USING_COMPILED, _rk4_backward_py, halfgrid_constant,
                            rk4_backward_affine_quadratic)
from mfgkit.riccati import TimeGrid


def build_problem(n, num_steps, seed=0):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n)) * 0.3
    Q = rng.normal(size=(n, n))
    Q = 0.5 * (Q + Q.T) + n * np.eye(n)
    W = rng.normal(size=(n, n)) * 0.5
    W = W @ W.T
    term = 0.1 * np.eye(n)
    C = np.ascontiguousarray(halfgrid_constant(-Q, num_steps))
    L = np.ascontiguousarray(halfgrid_constant(-A.T, num_steps))
    D = np.ascontiguousarray(halfgrid_constant(-A, num_steps))
    return C, L, D, W, term


def time_call(fn, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    print(f"compiled kernel available: {USING_COMPILED}")
    num_steps = 10000
    grid = TimeGrid(0.0, 1.0, num_steps)
    print(f"{'n':>3} {'fallback [ms]':>14} {'compiled [ms]':>14} {'speedup':>8}")
    for n in (1, 2, 4, 8):
        C, L, D, W, term = build_problem(n, num_steps)
        t_py = time_call(lambda: _rk4_backward_py(C, L, D, W, 1.0, term, grid.h,
                                                  num_steps, True, 1e12))
        if USING_COMPILED:
            t_cy = time_call(lambda: rk4_backward_affine_quadratic(
                grid, term, C, L, D, W, 1.0, symmetrize=True))
            print(f"{n:>3} {t_py * 1e3:>14.1f} {t_cy * 1e3:>14.1f} {t_py / t_cy:>7.1f}x")
        else:
            print(f"{n:>3} {t_py * 1e3:>14.1f} {'-':>14} {'-':>8}")


if __name__ == "__main__":
    main()
