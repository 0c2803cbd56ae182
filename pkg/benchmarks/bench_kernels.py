#!/usr/bin/env python3
"""Benchmark the compiled kernels against the numpy fallback.

Covers the three hot loops: the per-step parabolic minimax application, the
Gauss-Seidel value-iteration sweep, and the Euler path stepping (plain and
with the non-degenerate companion).  Results are identical bit-for-bit between
backends; only the wall time differs.

Usage: python benchmarks/bench_kernels.py [--paths 100000] [--steps 2000]
"""

import argparse
import time

import numpy as np

from sdgames import _kernels
from sdgames._kernels import pykernels
from sdgames.grids import StateGrid
from sdgames.model import make_spec
from sdgames.solver import build_tables


def timeit(fn, repeat=3):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--paths", type=int, default=50_000)
    ap.add_argument("--steps", type=int, default=1000)
    ap.add_argument("--nodes", type=int, default=1201)
    args = ap.parse_args()

    if not _kernels.HAVE_COMPILED:
        print("compiled extension not built; nothing to compare")
        return

    impls = {"python": pykernels, "compiled": _kernels._core}

    spec = make_spec("pollution", {"gamma": 4.0, "a": 1.0, "b": 2.0, "d": 1.0})
    grid = StateGrid.from_box(spec.box, args.nodes)
    tables = build_tables(spec, grid)
    V = np.sin(grid.nodes()[:, 0])
    gen = np.random.default_rng(0)

    rows = []

    def add(name, times, checks_equal):
        speed = times["python"] / times["compiled"]
        rows.append((name, times["python"], times["compiled"], speed, checks_equal))

    # parabolic minimax application (one explicit step's work)
    out = {}
    times = {}
    for label, impl in impls.items():
        times[label] = timeit(
            lambda impl=impl: out.__setitem__(
                label, impl.minimax_apply(V, tables.coefs, tables.idxs, tables.f, 0)
            )
        )
    add(f"minimax_apply ({args.nodes} nodes x {tables.f.shape[0]}x{tables.f.shape[1]} pairs)",
        times, np.array_equal(out["python"], out["compiled"]))

    # Gauss-Seidel sweep
    out = {}
    times = {}
    for label, impl in impls.items():
        W = V.copy()
        times[label] = timeit(
            lambda impl=impl, W=W: impl.gs_sweep(
                W, tables.coefs, tables.idxs, tables.f, tables.rowsum, 0.25, 0
            ),
            repeat=1,
        )
        out[label] = W
    add("gs_sweep (one lexicographic sweep)", times,
        np.array_equal(out["python"], out["compiled"]))

    # Euler stepping
    P, S = args.paths, min(args.steps, 256)
    alpha = gen.uniform(0.0, 4.0, P)
    beta = gen.uniform(1.0, 2.0, P)
    noise = gen.normal(size=(P, S))
    out = {}
    times = {}
    for label, impl in impls.items():
        x = np.ones(P)
        traj = np.empty((P, S))
        times[label] = timeit(
            lambda impl=impl, x=x, traj=traj: impl.euler_affine_block(
                x.copy(), alpha, beta, 0.5, noise, 1e-3, traj
            )
        )
        xx = np.ones(P)
        impl.euler_affine_block(xx, alpha, beta, 0.5, noise, 1e-3, traj)
        out[label] = traj.copy()
    add(f"euler_affine_block ({P} paths x {S} steps)", times,
        np.array_equal(out["python"], out["compiled"]))

    # companion stepping
    x0 = np.ones(P)
    traj = np.empty((P, S))
    pykernels.euler_affine_block(x0.copy(), alpha, beta, 0.5, noise, 1e-3, traj)
    noise1 = gen.normal(size=(P, S))
    out = {}
    times = {}
    for label, impl in impls.items():
        trj = np.empty((P, S))
        times[label] = timeit(
            lambda impl=impl, trj=trj: impl.euler_aug_affine_block(
                np.ones(P), np.ones(P), traj, alpha, beta, 0.5, 1.0, 0.1,
                noise, noise1, 1e-3, trj
            )
        )
        out[label] = trj.copy()
    add(f"euler_aug_affine_block ({P} paths x {S} steps)", times,
        np.array_equal(out["python"], out["compiled"]))

    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{width}}  {'python':>10}  {'compiled':>10}  {'speedup':>8}  bit-equal")
    for name, tp, tc, speed, eq in rows:
        print(f"{name:<{width}}  {tp * 1e3:>8.2f}ms  {tc * 1e3:>8.2f}ms  {speed:>7.1f}x  {eq}")


if __name__ == "__main__":
    main()
