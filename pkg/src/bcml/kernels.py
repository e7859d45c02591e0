"""Kernel dispatch: the compiled extension when it imports, pure Python otherwise.

Set ``BCML_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _fallback

BACKEND = "python"
leapfrog = _fallback.leapfrog
jacobi_sweep = _fallback.jacobi_sweep

if os.environ.get("BCML_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels
    except ImportError:  # extension not built
        pass
    else:
        BACKEND = "cython"
        leapfrog = _kernels.leapfrog
        jacobi_sweep = _kernels.jacobi_sweep


def get(backend: str):
    """Return ``(leapfrog, jacobi_sweep)`` for an explicit backend name."""
    if backend == "python":
        return _fallback.leapfrog, _fallback.jacobi_sweep
    if backend == "cython":
        from . import _kernels

        return _kernels.leapfrog, _kernels.jacobi_sweep
    raise ValueError(f"unknown backend {backend!r}")
