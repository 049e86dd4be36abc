"""Time the permutation kernels of both backends.

Usage::

    python benchmarks/bench_kernels.py [--repeat 3] [--nperm 999]

Each case checks that the two backends agree before timing them.
"""

import argparse
import time

import numpy as np

from mfaspca import _backend, _pykernels
from mfaspca.moran import draw_permutations
from mfaspca.weights import knn_weights, row_standardize

try:
    from mfaspca import _ckernels
except ImportError:
    _ckernels = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(nperm, rng):
    for n in (50, 100, 500):
        W = row_standardize(knn_weights(rng.uniform(size=(n, 2)), 5)).matrix
        perms = draw_permutations(n, nperm, seed=0)
        z = rng.standard_normal(n)
        yield f"classical    n={n:<4d}", lambda impl, z=z, W=W, p=perms: _backend.moran_numerators(z, W, p, impl=impl)
        for d in (1, 10):
            A = rng.standard_normal((d, n, 101))
            yield (f"trace d={d:<2d} n={n:<4d}",
                   lambda impl, A=A, W=W, p=perms: _backend.cross_numerators(A, A, W, p, impl=impl))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--nperm", type=int, default=999)
    args = parser.parse_args()
    if _ckernels is None:
        print("compiled kernels not built; only the NumPy backend is available")
    rng = np.random.default_rng(0)
    print(f"{'case':<22s} {'numpy [s]':>10s} {'cython [s]':>11s} {'speedup':>8s}")
    for name, run in cases(args.nperm, rng):
        t_py = best_of(lambda: run(_pykernels), args.repeat)
        if _ckernels is None:
            print(f"{name:<22s} {t_py:10.4f} {'-':>11s} {'-':>8s}")
            continue
        np.testing.assert_allclose(run(_ckernels), run(_pykernels), rtol=1e-10, atol=1e-10)
        t_c = best_of(lambda: run(_ckernels), args.repeat)
        print(f"{name:<22s} {t_py:10.4f} {t_c:11.4f} {t_py / t_c:7.1f}x")


if __name__ == "__main__":
    main()
