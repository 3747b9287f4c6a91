#!/usr/bin/env python3
"""Benchmark the compiled hot kernels against the numpy fallback.

Times the three kernels on representative workloads and a whole
simulate+estimate pipeline, and checks that the backends agree:
the underlying uniforms are bit-identical by construction, and the float
outputs may differ only in the last ulps (different exp/log rounding).

Run:  python benchmarks/bench_backends.py
"""

import time

import numpy as np

from gftree._hot import compiled_backend, numpy_backend
from gftree.model import reference_model
from gftree import streams


def timeit(fn, *args, repeat=5):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_kernel(name, np_fn, c_fn, args, pick=lambda r: r):
    t_np, r_np = timeit(np_fn, *args)
    row = f"{name:28s} numpy {t_np * 1e3:9.2f} ms"
    if c_fn is not None:
        t_c, r_c = timeit(c_fn, *args)
        close = np.allclose(np.asarray(pick(r_np)), np.asarray(pick(r_c)),
                            rtol=1e-12, atol=1e-300)
        row += (f"   compiled {t_c * 1e3:9.2f} ms   speedup "
                f"{t_np / t_c:5.1f}x   agree(1e-12): {close}")
    print(row)


def main():
    compiled = compiled_backend()
    print(f"compiled extension available: {compiled is not None}\n")

    n = 1 << 20
    key = streams.run_key(1)
    keys = streams.child_keys(np.broadcast_to(key, (n,)).copy(),
                              np.arange(n, dtype=np.uint64))
    u = streams.draw_uniform(keys, streams.STREAM_LIFETIME, 0)
    x = 0.3 + 2.5 * streams.draw_uniform(keys, streams.STREAM_INITIAL_SIZE, 0)
    v = 0.2 + 2.8 * streams.draw_uniform(keys, streams.STREAM_GROWTH, 0)
    bench_kernel("powerlaw_lifetimes (2^20)",
                 numpy_backend.powerlaw_lifetimes,
                 compiled.powerlaw_lifetimes if compiled else None,
                 (u, x, v, 1.0, 2.0))

    sizes = np.sort(x)
    centers = np.ascontiguousarray(np.linspace(0.05, 5.0, 2000))
    bench_kernel("kernel_sums (2^20 x 2000)",
                 numpy_backend.kernel_sums,
                 compiled.kernel_sums if compiled else None,
                 (sizes, centers, 0.02, 5.0, 0.3989422804014327))

    m = 2000
    dx = 5.0 / m
    faces = np.arange(1, m + 1) * dx
    cts = (np.arange(m) + 0.5) * dx
    n0 = np.ascontiguousarray(np.where(cts < 2.5, 0.4, 0.0))
    pos = (2 * cts - cts[0]) / dx
    k = np.floor(pos).astype(np.int64)
    valid = k < m - 1
    args = (n0, 4.5e-4, np.ascontiguousarray(1.0 * faces),
            np.ascontiguousarray(np.where(valid, 2 * (2 * cts) ** 2, 0.0)),
            np.ascontiguousarray(cts ** 2),
            np.ascontiguousarray(np.where(valid, k, -1)),
            np.ascontiguousarray(np.where(valid, pos - k, 0.0)),
            dx, 20000, 0.0)
    bench_kernel("pde_run (2000 cells x 2e4)",
                 numpy_backend.pde_run,
                 compiled.pde_run if compiled else None,
                 args, pick=lambda r: r[0])

    # end-to-end: simulate a 2^17 tree and estimate, per backend selection
    from gftree.trees import extract_observations, simulate_full_tree
    from gftree.estimator import estimate_division_rate

    def pipeline():
        tree = simulate_full_tree(reference_model(), 16, seed=1)
        return estimate_division_rate(extract_observations(tree)).values

    t, _ = timeit(pipeline, repeat=3)
    from gftree._hot import BACKEND
    print(f"\nsimulate(2^17)+estimate pipeline [{BACKEND} backend]: "
          f"{t * 1e3:.0f} ms")
    print("(set GFTREE_BACKEND=numpy to time the fallback pipeline)")


if __name__ == "__main__":
    main()
