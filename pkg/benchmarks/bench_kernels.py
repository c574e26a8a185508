#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Runs the hot paths (particle filtering and the MIF2 inner loop) on
study-sized problems under both backends and prints a timing table.

    python benchmarks/bench_kernels.py [--particles K] [--timepoints T]
"""

import argparse
import time

import numpy as np

from ordss._kernels import _numpy as np_impl

try:
    from ordss._kernels import _numba as nb_impl
except ImportError:
    nb_impl = None


def time_call(fn, *args, repeats=3, **kwargs):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args, **kwargs)
        best = min(best, time.perf_counter() - t0)
    return best


def gr_problem(rng, T, K, items_per_state=6, categories=7):
    q = 2 * items_per_state
    A = np.array([[0.7, 0.25], [0.0, 0.7]])
    sigma, _, _ = np_impl.identification_sigma(A)
    item_state = np.repeat(np.arange(2), items_per_state).astype(np.int64)
    alpha = np.ones(q)
    base = np.arange(1, categories) - categories / 2.0
    beta_flat = np.tile(base, q)
    beta_off = (np.arange(q + 1) * (categories - 1)).astype(np.int64)
    y = rng.integers(1, categories + 1, (T, q)).astype(np.int64)
    return A, np.sqrt(sigma), item_state, alpha, beta_flat, beta_off, y


def bench_pf(impl, rng, T, K):
    A, sig_sqrt, item_state, alpha, beta_flat, beta_off, y = gr_problem(rng, T, K)
    init = rng.standard_normal((K, 2))
    prop = rng.standard_normal((T, K, 2))
    unifs = rng.random((T, K))
    su = np.zeros(T)
    impl.pf_gr(A, sig_sqrt, y[:2], item_state, alpha, beta_flat, beta_off,
               init, prop[:2], unifs[:2], False, su[:2])  # warmup/compile
    return time_call(impl.pf_gr, A, sig_sqrt, y, item_state, alpha, beta_flat,
                     beta_off, init, prop, unifs, False, su)


def bench_mif2_chunk(impl, rng, T, K, items_per_state=6, categories=7):
    q = 2 * items_per_state
    _, _, item_state, alpha, _, _, y = gr_problem(rng, T, K, items_per_state,
                                                  categories)
    th_off = (np.arange(q + 1) * (categories - 1)).astype(np.int64)
    ncat = np.full(q, categories, dtype=np.int64)
    D = 4 + q * (categories - 1)
    theta = np.concatenate(
        [np.tile([0.1, 0.0, 0.0, 0.1], (K, 1)),
         np.tile(np.concatenate([[-2.0] + [np.log(0.36)] * (categories - 2)] * q),
                 (K, 1))], axis=1)
    x = rng.standard_normal((K, 2))
    sd = np.full(D, 0.3)
    pert = rng.standard_normal((T, K, D))
    prop = rng.standard_normal((T, K, 2))
    unifs = rng.random((T, K))
    ll = np.zeros(T)
    seed = np.uint64(5) if impl is nb_impl else 5
    impl.mif2_chunk_gr(theta.copy(), x.copy(), y[:2], item_state, alpha,
                       th_off, ncat, 2, sd, pert[:2], prop[:2], unifs[:2],
                       0.98, 101, seed, 1, ll[:2])  # warmup/compile
    return time_call(impl.mif2_chunk_gr, theta.copy(), x.copy(), y, item_state,
                     alpha, th_off, ncat, 2, sd, pert, prop, unifs, 0.98, 101,
                     seed, 1, ll, repeats=1)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--particles", type=int, default=1000)
    parser.add_argument("--timepoints", type=int, default=500)
    parser.add_argument("--chunk", type=int, default=64,
                        help="timepoints per MIF2 chunk benchmark")
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    rows = []
    backends = [("numpy", np_impl)]
    if nb_impl is not None:
        backends.append(("numba", nb_impl))
    for name, impl in backends:
        t_pf = bench_pf(impl, np.random.default_rng(0), args.timepoints,
                        args.particles)
        t_chunk = bench_mif2_chunk(impl, np.random.default_rng(0), args.chunk,
                                   args.particles)
        rows.append((name, t_pf, t_chunk))
    print(f"\nparticle filter (GR, 12 items, 7 categories, "
          f"T={args.timepoints}, K={args.particles}) and MIF2 chunk "
          f"(T={args.chunk}):\n")
    print(f"{'backend':8s} {'pf [s]':>10s} {'mif2 chunk [s]':>15s}")
    for name, t_pf, t_chunk in rows:
        print(f"{name:8s} {t_pf:10.3f} {t_chunk:15.3f}")
    if len(rows) == 2:
        print(f"{'speedup':8s} {rows[0][1] / rows[1][1]:10.1f}x "
              f"{rows[0][2] / rows[1][2]:14.1f}x")


if __name__ == "__main__":
    main()
