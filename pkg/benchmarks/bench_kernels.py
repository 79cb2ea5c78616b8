"""Compare the compiled kernels with the pure-Python fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from eventsets import _kernels_py

try:
    from eventsets import _kernels as _kernels_cy
except ImportError:
    _kernels_cy = None


def cases(rng):
    cost = rng.normal(size=(20, 100))
    s = rng.uniform(0, 900, 500)
    e = s + rng.uniform(5, 100, 500)
    sc = rng.uniform(size=500)
    gs = rng.uniform(0, 900, 40)
    ge = gs + rng.uniform(5, 100, 40)
    return {
        "hungarian 20x100": lambda k: k.hungarian(cost),
        "soft_nms 500 -> 100": lambda k: k.soft_nms(s, e, sc, 0.5, 100),
        "greedy_match 500 x 40": lambda k: k.greedy_match(gs, ge, s, e, 0.5),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<24} {'python ms':>10} {'cython ms':>10} {'speedup':>8}")
    for name, fn in cases(rng).items():
        t_py = min(timeit.repeat(lambda: fn(_kernels_py), number=1, repeat=args.repeat)) * 1e3
        if _kernels_cy is None:
            print(f"{name:<24} {t_py:>10.3f} {'n/a':>10} {'':>8}")
            continue
        a, b = fn(_kernels_py), fn(_kernels_cy)
        for x, y in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
            np.testing.assert_array_equal(x, y)
        t_cy = min(timeit.repeat(lambda: fn(_kernels_cy), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<24} {t_py:>10.3f} {t_cy:>10.3f} {t_py / t_cy:>7.1f}x")


if __name__ == "__main__":
    main()
