import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcml import geometry, kernels, wave

try:
    kernels.get("cython")
    HAVE_EXT = True
except ImportError:
    HAVE_EXT = False

needs_ext = pytest.mark.skipif(not HAVE_EXT, reason="compiled extension not built")


def _leapfrog_args(M, n_steps, R, seed):
    L = wave.laplacian(M)
    dt = wave.stability_bound(M, 0.5)
    nb = len(M.boundary_ids)
    bvals = np.random.default_rng(seed).standard_normal((n_steps + 1, nb, R))
    bvals[: wave.FIRST_NODE] = 0.0
    probe = wave.neumann_trace(M)
    return (L.indptr.astype(np.int32), L.indices.astype(np.int32), L.data.astype(float), dt * dt,
            M.boundary_ids.astype(np.int64), bvals, probe.indptr.astype(np.int32),
            probe.indices.astype(np.int32), probe.data.astype(float)), probe.shape[0]


def test_backend_reported():
    assert kernels.BACKEND in ("python", "cython")
    if HAVE_EXT and os.environ.get("BCML_PURE_PYTHON", "") not in ("1", "true", "yes"):
        assert kernels.BACKEND == "cython"


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get("fortran")


@needs_ext
@pytest.mark.parametrize("M", [geometry.interval(20), geometry.rect2d(7, 5, 1.0, 1.0, 0.7)], ids=["1d", "2d"])
def test_leapfrog_backends_agree(M):
    args, P = _leapfrog_args(M, 60, 3, 0)
    outs = []
    for b in ("python", "cython"):
        out = np.zeros((61, P, 3))
        final = np.asarray(kernels.get(b)[0](*args, out))
        outs.append((out, final))
    np.testing.assert_allclose(outs[0][0], outs[1][0], rtol=0, atol=1e-12)
    np.testing.assert_allclose(outs[0][1], outs[1][1], rtol=0, atol=1e-12)


@needs_ext
@given(st.integers(2, 9), st.integers(1, 4), st.integers(0, 2 ** 31 - 1))
@settings(max_examples=25)
def test_jacobi_sweep_backends_agree(n, K, seed):
    rng = np.random.default_rng(seed)
    mats = [rng.standard_normal((n, n)) for _ in range(K)]
    A0 = np.ascontiguousarray(np.array([m + m.T for m in mats]).transpose(1, 2, 0))
    res = []
    for b in ("python", "cython"):
        A, V = A0.copy(), np.eye(n)
        smax = kernels.get(b)[1](A, V, 1e-14)
        res.append((A, V, smax))
    np.testing.assert_allclose(res[0][0], res[1][0], atol=1e-10)
    np.testing.assert_allclose(res[0][1], res[1][1], atol=1e-10)
    assert res[0][2] == pytest.approx(res[1][2], abs=1e-12)
    # the sweep is an orthogonal similarity: Frobenius norms are preserved
    A, V, _ = res[0]
    np.testing.assert_allclose(V @ V.T, np.eye(n), atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(A, axis=(0, 1)), np.linalg.norm(A0, axis=(0, 1)), rtol=1e-12)


def test_pure_python_switch():
    code = "from bcml import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, BCML_PURE_PYTHON="1")
    r = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert r.stdout.strip() == "python"
