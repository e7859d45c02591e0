"""Boundary control method laboratory.

Reconstructs a manifold with boundary (up to isometry) from its boundary
wave response: response operator, connecting operator, model space, operator
eikonals, spectrum cloud and metric copy.  ``bcml.solenoidal`` holds the
3D curl-space probes.
"""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
