"""Compiled vs pure-Python kernels on representative workloads.

    python benchmarks/bench_kernels.py [--repeat N]

Prints wall time per backend, the speedup and the max difference between
the two outputs.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from bcml import geometry, kernels, wave


def _time(fn, repeat: int) -> float:
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def leapfrog_case(n: int = 24, n_steps: int = 200, R: int = 32):
    M = geometry.rect2d(n, n, 1.0, 1.0, 1.0)
    L = wave.laplacian(M)
    dt = wave.stability_bound(M, 0.5)
    nb = len(M.boundary_ids)
    rng = np.random.default_rng(0)
    bvals = rng.standard_normal((n_steps + 1, nb, R))
    bvals[: wave.FIRST_NODE] = 0.0
    probe = wave.neumann_trace(M)
    args = (L.indptr.astype(np.int32), L.indices.astype(np.int32), L.data.astype(float), dt * dt,
            M.boundary_ids.astype(np.int64), bvals, probe.indptr.astype(np.int32),
            probe.indices.astype(np.int32), probe.data.astype(float))

    def run(backend):
        out = np.zeros((n_steps + 1, probe.shape[0], R))
        final = kernels.get(backend)[0](*args, out)
        return out, np.asarray(final)

    return f"leapfrog rect2d({n}x{n}), {n_steps} steps, {R} controls", run


def jacobi_case(n: int = 160, K: int = 12):
    rng = np.random.default_rng(1)
    V, _ = np.linalg.qr(rng.standard_normal((n, n)))
    mats = []
    for _ in range(K):
        E = 1e-2 * rng.standard_normal((n, n))
        mats.append(V @ np.diag(rng.uniform(0, 1, n)) @ V.T + 0.5 * (E + E.T))
    A0 = np.ascontiguousarray(np.array(mats).transpose(1, 2, 0))

    def run(backend):
        A = A0.copy()
        Vt = np.eye(n)
        kernels.get(backend)[1](A, Vt, 1e-14)
        return A, Vt

    return f"jacobi_sweep n={n}, K={K}", run


def main(argv=None) -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    try:
        kernels.get("cython")
    except ImportError:
        print("compiled extension not built; only the Python backend is available")
        return
    for label, run in (leapfrog_case(), jacobi_case()):
        a, b = run("cython"), run("python")
        diff = max(float(np.max(np.abs(x - y))) for x, y in zip(a, b))
        tc = _time(lambda: run("cython"), args.repeat)
        tp = _time(lambda: run("python"), args.repeat)
        print(f"{label}: cython {tc * 1e3:.1f} ms, python {tp * 1e3:.1f} ms, "
              f"speedup {tp / tc:.1f}x, max diff {diff:.2e}")


if __name__ == "__main__":
    main()
