"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--sizes 64 128 256] [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from arrival_lab import _kernels_py

try:
    from arrival_lab import _kernels as compiled
except ImportError:
    compiled = None


def _cases(n, rng):
    rho = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    nq = 4 * n
    g = rng.normal(size=(nq, n)) * (rng.random((nq, n)) > 0.7)
    h = rng.normal(size=(nq, 2 * n - 1)) + 1j * rng.normal(size=(nq, 2 * n - 1))
    return {"antidiagonal_gather": (rho,), "anti_wick_assemble": (g, h)}


def _best(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[64, 128, 256])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'n':>6}{'python [ms]':>14}{'cython [ms]':>14}{'speedup':>10}  max|diff|")
    for n in args.sizes:
        for name, a in _cases(n, rng).items():
            tp = _best(getattr(_kernels_py, name), a, args.repeat)
            if compiled is None:
                print(f"{name:<22}{n:>6}{1e3 * tp:>14.3f}{'n/a':>14}{'':>10}")
                continue
            tc = _best(getattr(compiled, name), a, args.repeat)
            diff = np.max(np.abs(getattr(compiled, name)(*a) - getattr(_kernels_py, name)(*a)))
            print(f"{name:<22}{n:>6}{1e3 * tp:>14.3f}{1e3 * tc:>14.3f}{tp / tc:>10.1f}  {diff:.1e}")


if __name__ == "__main__":
    main()
