"""Time the compiled kernels against the numpy fallback.

Run with ``python3 benchmarks/bench_kernels.py``. Each kernel is called on
identical inputs through both backends; the table reports the best of
several repeats and the largest absolute difference between the outputs.
"""
import argparse
import timeit

import numpy as np

from mvlevy import _kernels_py

try:
    from mvlevy import _kernels
except ImportError:  # pragma: no cover
    _kernels = None


def cases(gen):
    R, N, d = 200, 64, 2
    x = gen.normal(size=(R, N, d))
    yield "tanh_mean_field", (x, x, 1.0, 1.0, 1.0)
    n, B = 1000, 500
    A = gen.normal(0, 0.3, (n, d, d))
    F = gen.normal(size=(B, n, d))
    yield "linear_recursion", (A, F, np.zeros((B, d)), 1e-3)
    paths = gen.normal(size=(2000, 8, 1001, d))
    yield "sup_sq_distance", (paths, paths[0, 0] * 0.5)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled backend not built; nothing to compare")
        return 1
    print(f"{'kernel':<18}{'python [ms]':>13}{'compiled [ms]':>15}{'speedup':>9}{'max diff':>11}")
    for name, call_args in cases(np.random.default_rng(0)):
        fp, fc = getattr(_kernels_py, name), getattr(_kernels, name)
        tp = min(timeit.repeat(lambda: fp(*call_args), number=1, repeat=args.repeat))
        tc = min(timeit.repeat(lambda: fc(*call_args), number=1, repeat=args.repeat))
        diff = float(np.max(np.abs(np.asarray(fp(*call_args)) - np.asarray(fc(*call_args)))))
        print(f"{name:<18}{1e3 * tp:>13.2f}{1e3 * tc:>15.2f}{tp / tc:>9.1f}{diff:>11.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
