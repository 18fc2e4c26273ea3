"""Benchmark the numba kernels against their pure-numpy fallbacks.

Run:  python benchmarks/bench_kernels.py [--nodes 2000] [--cols 256]

The numba path is what MMGC_NUMBA=1 (the default) selects at import time;
this script times both implementations directly, warming the JIT first.
"""

import argparse
import time

import numpy as np

from mmgc.kernels import (
    NUMBA_ENABLED,
    _csr_dirichlet_loop,
    _csr_dirichlet_numpy,
    _csr_spmm_loop,
    _csr_spmm_numpy,
    _modality_mix_loop,
    _modality_mix_numpy,
)

if NUMBA_ENABLED:
    from numba import njit

    csr_spmm_jit = njit(cache=True)(_csr_spmm_loop)
    csr_dirichlet_jit = njit(cache=True)(_csr_dirichlet_loop)
    modality_mix_jit = njit(cache=True)(_modality_mix_loop)
else:  # benchmark degenerates to numpy-vs-python-loop
    csr_spmm_jit = _csr_spmm_loop
    csr_dirichlet_jit = _csr_dirichlet_loop
    modality_mix_jit = _modality_mix_loop


def timeit(fn, *args, repeat=5):
    fn(*args)  # warm-up (JIT compile)
    best = np.inf
    for _ in range(repeat):
        tic = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - tic)
    return best


def build_graph(rng, n, avg_degree=30):
    rows = np.repeat(np.arange(n), avg_degree)
    cols = rng.integers(0, n, size=rows.size)
    keep = rows != cols
    rows, cols = rows[keep], cols[keep]
    rows, cols = np.concatenate([rows, cols]), np.concatenate([cols, rows])
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    dedup = np.concatenate([[True], (np.diff(rows) != 0) | (np.diff(cols) != 0)])
    rows, cols = rows[dedup], cols[dedup]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
    weights = rng.uniform(0.1, 1.0, size=rows.size)
    return indptr, cols.astype(np.int64), weights


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--nodes", type=int, default=2000)
    parser.add_argument("--cols", type=int, default=256)
    parser.add_argument("--rows", type=int, default=100_000,
                        help="gradient-field rows for the modality mix")
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    indptr, indices, weights = build_graph(rng, args.nodes)
    x = rng.normal(size=(args.nodes, args.cols))
    field = rng.normal(size=(args.rows, 64))
    mask = rng.random(args.rows) < 0.5
    c1, c2 = rng.normal(size=args.rows), rng.normal(size=args.rows)

    print(f"numba available: {NUMBA_ENABLED}")
    print(f"graph: {args.nodes} nodes, {indices.size} nnz, dense operand "
          f"{args.nodes}x{args.cols}")
    rows = [
        ("csr_spmm", timeit(csr_spmm_jit, indptr, indices, weights, x),
         timeit(_csr_spmm_numpy, indptr, indices, weights, x)),
        ("csr_dirichlet",
         timeit(csr_dirichlet_jit, indptr, indices, weights, x),
         timeit(_csr_dirichlet_numpy, indptr, indices, weights, x)),
        ("modality_mix",
         timeit(modality_mix_jit, field, 32, mask, c1, c2),
         timeit(_modality_mix_numpy, field, 32, mask, c1, c2)),
    ]
    print(f"\n{'kernel':<16}{'numba (ms)':>12}{'numpy (ms)':>12}{'speedup':>9}")
    for name, jit_s, np_s in rows:
        print(f"{name:<16}{jit_s * 1e3:>12.3f}{np_s * 1e3:>12.3f}"
              f"{np_s / jit_s:>9.2f}x")


if __name__ == "__main__":
    main()
