"""Benchmark the compiled kernels against the NumPy fallback.

Usage: python -m bundlesup.kernels.bench  (or `bundlesup bench-kernels`)
"""

import time

import numpy as np

from . import backends


def _random_csr(n, avg_degree, rng):
    nnz_per_row = rng.poisson(avg_degree, size=n).clip(1, None)
    indptr = np.zeros(n + 1, dtype=np.intp)
    np.cumsum(nnz_per_row, out=indptr[1:])
    indices = rng.integers(0, n, size=int(indptr[-1])).astype(np.intp)
    data = rng.random(int(indptr[-1]))
    return indptr, indices, data


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run_benchmark(n=20000, avg_degree=12, cols=64, repeats=5):
    rng = np.random.default_rng(0)
    indptr, indices, data = _random_csr(n, avg_degree, rng)
    dense = rng.random((n, cols))
    mods = backends()
    if "compiled" not in mods:
        print("compiled backend not built; showing numpy only")

    print(f"spmm: n={n}, nnz={indices.size}, cols={cols} (best of {repeats})")
    base = None
    for name, mod in mods.items():
        t = _time(lambda m=mod: m.spmm(indptr, indices, data, dense), repeats)
        speedup = "" if base is None else f"  ({base / t:.1f}x vs numpy)"
        if name == "numpy":
            base = t
        print(f"  {name:9s} {t * 1e3:8.2f} ms{speedup}")

    results = {name: mod.spmm(indptr, indices, data, dense) for name, mod in mods.items()}
    if len(results) == 2:
        diff = np.abs(results["numpy"] - results["compiled"]).max()
        print(f"  max |numpy - compiled| = {diff:.3e}")

    print(f"bfs: n={n}, nnz={indices.size}")
    base = None
    for name, mod in mods.items():
        t = _time(lambda m=mod: m.bfs_levels(indptr, indices, n, 0), repeats)
        speedup = "" if base is None else f"  ({base / t:.1f}x vs numpy)"
        if name == "numpy":
            base = t
        print(f"  {name:9s} {t * 1e3:8.2f} ms{speedup}")


if __name__ == "__main__":
    run_benchmark()
