"""Projection families, eikonal operators, joint diagonalization and spectrum clouds."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.sparse import issparse
from scipy.sparse.linalg import svds

from . import kernels


class AlgebraError(ValueError):
    pass


@dataclass(frozen=True)
class NestedFamily:
    """Nested projections P(s_k) = Q[:, :r_k] Q[:, :r_k]^T.

    Column c of ``Q`` enters at grid index ``levels[c]``; ``levels`` is
    nondecreasing, so r_k = #{c : levels[c] <= k}.
    """

    Q: np.ndarray
    levels: np.ndarray
    s_grid: np.ndarray

    def rank(self, k: int) -> int:
        return int(np.searchsorted(self.levels, k, side="right"))

    def projector(self, k: int) -> np.ndarray:
        Qk = self.Q[:, : self.rank(k)]
        return Qk @ Qk.T

    def project(self, z: np.ndarray, k: int) -> np.ndarray:
        Qk = self.Q[:, : self.rank(k)]
        return Qk @ (Qk.T @ z)

    def entrance_values(self, rule: str = "upper") -> np.ndarray:
        s = self.s_grid
        if rule == "upper":
            return s[self.levels]
        if rule == "lower":
            return s[np.maximum(self.levels - 1, 0)]
        raise AlgebraError(f"unknown rule {rule!r}")

    def eikonal(self, rule: str = "upper") -> np.ndarray:
        """Riemann-Stieltjes sum of s dP(s); see ``eikonal_from_family``."""
        return (self.Q * self.entrance_values(rule)[None, :]) @ self.Q.T

    def as_list(self) -> list[np.ndarray]:
        return [self.projector(k) for k in range(len(self.s_grid))]


def nested_basis(X: np.ndarray, keys: np.ndarray, s_grid: np.ndarray, tol_rank: float = 1e-6) -> NestedFamily:
    """Orthonormal basis of the growing spans span{X[:, j] : keys[j] < s_k}.

    Each level's new columns are orthogonalized against the current basis
    (twice, for stability) and the residual block is compressed by SVD,
    keeping directions with singular value above tol_rank * ||X||.
    """
    s_grid = np.asarray(s_grid, float)
    if np.any(np.diff(s_grid) <= 0):
        raise AlgebraError("s_grid must be strictly increasing")
    m = X.shape[0]
    if min(X.shape) == 0:
        scale = 0.0
    elif issparse(X):
        scale = float(svds(X.astype(float), k=1, return_singular_vectors=False, random_state=0)[0])
    else:
        scale = float(np.linalg.norm(X, 2))
    # keys and grid values often come from different float expressions of the same multiple
    eps = 1e-9 * max(1.0, float(np.abs(s_grid).max()))
    buf = np.empty((m, min(m, X.shape[1])))
    r = 0
    levels: list[int] = []
    used = np.zeros(len(keys), bool)
    for k, s in enumerate(s_grid):
        new = np.flatnonzero(~used & (keys < s - eps))
        if len(new) == 0 or scale == 0 or r == buf.shape[1]:
            used[new] = True
            continue
        used[new] = True
        Z = X[:, new]
        Z = Z.toarray() if hasattr(Z, "toarray") else np.array(Z, dtype=float)
        Q = buf[:, :r]
        for _ in range(2):
            Z -= Q @ (Q.T @ Z)
        U, S, _ = np.linalg.svd(Z, full_matrices=False)
        keep = min(int(np.sum(S > tol_rank * scale)), buf.shape[1] - r)
        if keep:
            buf[:, r:r + keep] = U[:, :keep]
            r += keep
            levels += [k] * keep
    Q = buf[:, :r]
    return NestedFamily(Q, np.asarray(levels, int), s_grid)


def check_family(projs: list[np.ndarray], tol: float = 1e-8) -> None:
    """Raise unless every entry is an orthogonal projection and the list is nested."""
    for k, P in enumerate(projs):
        nrm = max(1.0, np.linalg.norm(P))
        if np.linalg.norm(P - P.T) > tol * nrm or np.linalg.norm(P @ P - P) > tol * nrm:
            raise AlgebraError(f"entry {k} is not an orthogonal projection")
        if k and np.linalg.norm(P @ projs[k - 1] - projs[k - 1]) > tol * nrm:
            raise AlgebraError(f"family is not nested at entry {k}")


def _check_monotone(projs) -> None:
    ranks = [float(np.trace(P)) for P in projs]
    for k in range(1, len(ranks)):
        if ranks[k] < ranks[k - 1] - 0.5:
            raise AlgebraError(f"family is not monotone: rank drops at entry {k}")


def eikonal_from_family(projs: list[np.ndarray], s_grid, rule: str = "upper") -> np.ndarray:
    """Sum of s dP(s) over the grid.

    ``upper`` charges each increment P(s_k) - P(s_{k-1}) with s_k (so the
    two-point family {0, I} on {0, 1} gives I); ``lower`` charges it with
    s_{k-1}.  They differ by at most the largest grid step.
    """
    s = np.asarray(s_grid, float)
    if len(projs) != len(s):
        raise AlgebraError("one projection per grid value is required")
    if rule not in ("upper", "lower"):
        raise AlgebraError(f"unknown rule {rule!r}")
    _check_monotone(projs)
    out = np.zeros_like(projs[0], dtype=float)
    prev = np.zeros_like(out)
    for k, P in enumerate(projs):
        w = s[k] if rule == "upper" else s[max(k - 1, 0)]
        out += w * (P - prev)
        prev = P
    return out


def eikonal_integral_form(projs: list[np.ndarray], s_grid, rule: str = "upper") -> np.ndarray:
    """s_K P(s_K) minus the integral of P(s) ds over [s_0, s_K].

    The integral uses left endpoints for ``upper`` and right endpoints for
    ``lower``; by summation by parts this equals ``eikonal_from_family`` with
    the same rule exactly (up to roundoff).
    """
    s = np.asarray(s_grid, float)
    if len(projs) != len(s):
        raise AlgebraError("one projection per grid value is required")
    if rule not in ("upper", "lower"):
        raise AlgebraError(f"unknown rule {rule!r}")
    _check_monotone(projs)
    out = s[-1] * np.asarray(projs[-1], float)
    for k in range(1, len(s)):
        P = projs[k - 1] if rule == "upper" else projs[k]
        out = out - (s[k] - s[k - 1]) * P
    return out


def commutation_defect(A: np.ndarray, B: np.ndarray, norm: str = "2") -> float:
    """||AB - BA|| / (||A|| ||B||), spectral norm by default.

    ``norm="fro"`` measures the commutator in the Frobenius norm over the
    spectral norms of the factors, an upper bound that avoids a large SVD.
    """
    na, nb = np.linalg.norm(A, 2), np.linalg.norm(B, 2)
    if na == 0 or nb == 0:
        return 0.0
    C = A @ B - B @ A
    if norm == "fro":
        return float(np.linalg.norm(C) / (na * nb))
    if norm != "2":
        raise AlgebraError(f"unknown norm {norm!r}")
    # C is antisymmetric for symmetric inputs; its spectral norm is the top singular value
    return float(np.sqrt(max(np.linalg.eigvalsh(C.T @ C)[-1], 0.0)) / (na * nb))


@dataclass(frozen=True)
class JointDiagResult:
    basis: np.ndarray  # (n, n) orthogonal
    tuples: np.ndarray  # (n, K): diag(V^T A_k V)
    residual: float  # off-diagonal mass over total mass
    sweeps: int
    converged: bool


def _offdiag_ratio(A: np.ndarray, axis: int = 0) -> float:
    """Off-diagonal Frobenius mass over total mass; ``axis`` is the stacking axis (0 or 2)."""
    tot = np.sum(A * A)
    d = np.einsum("kii->ki", A) if axis == 0 else np.einsum("iik->ik", A)
    return float(np.sqrt(max(tot - np.sum(d * d), 0.0) / tot)) if tot > 0 else 0.0


def joint_diagonalize(mats, max_sweeps: int = 100, tol_offdiag: float = 1e-10, init: str = "auto",
                      backend: str | None = None, stall: float = 0.0) -> JointDiagResult:
    """Approximate joint diagonalizer of symmetric matrices by Jacobi rotations.

    ``init="auto"`` starts from the identity when the inputs are already
    diagonal and otherwise from the eigenvectors of a fixed generic linear
    combination, which is exact for commuting inputs with simple joint spectrum.
    Sweeps stop at convergence, after ``max_sweeps``, or once a sweep lowers
    the off-diagonal ratio by less than the relative amount ``stall``.
    """
    raw = [np.asarray(M, float) for M in mats]
    if not raw or any(M.ndim != 2 or M.shape != raw[0].shape or M.shape[0] != M.shape[1] for M in raw):
        raise AlgebraError("expected a list of square matrices of one size")
    A = np.array([0.5 * (M + M.T) for M in raw])
    K, n, _ = A.shape
    sweep = kernels.jacobi_sweep if backend is None else kernels.get(backend)[1]
    V = np.eye(n)
    if init == "auto" and _offdiag_ratio(A) > tol_offdiag:
        c = 1.0 / (np.arange(K) + np.sqrt(2.0)) * np.cos(np.arange(K) + 0.5)
        scales = np.array([max(np.linalg.norm(Ak, 2), 1e-300) for Ak in A])
        _, V = np.linalg.eigh(np.tensordot(c / scales, A, axes=1))
        A = np.matmul(np.matmul(V.T, A), V)
    elif init not in ("auto", "identity"):
        raise AlgebraError(f"unknown init {init!r}")
    # interleaved layout (n, n, K): each entry's K values are contiguous for the sweeps
    B = np.ascontiguousarray(A.transpose(1, 2, 0))
    Vt = np.ascontiguousarray(V.T)
    sweeps, converged = 0, _offdiag_ratio(A) <= tol_offdiag
    ratio = _offdiag_ratio(A)
    while not converged and sweeps < max_sweeps:
        smax = sweep(B, Vt, 1e-14)
        sweeps += 1
        prev, ratio = ratio, _offdiag_ratio(B, axis=2)
        converged = smax < 1e-12 or ratio <= tol_offdiag
        if prev - ratio <= stall * prev:
            break
    V = Vt.T.copy()
    tuples = np.einsum("iik->ik", B).copy()
    A = B.transpose(2, 0, 1)
    return JointDiagResult(V, tuples, _offdiag_ratio(A), sweeps, bool(converged))


@dataclass(frozen=True)
class SpectrumCloud:
    points: np.ndarray  # (m, K) cluster representatives, lexicographically sorted
    multiplicity: np.ndarray  # (m,) total weight per cluster
    labels: np.ndarray  # cluster index of each input tuple


def spectrum_cloud(tuples: np.ndarray, eps: float = 0.0, weights: np.ndarray | None = None) -> SpectrumCloud:
    """Merge tuples closer than ``eps`` in the max norm (single linkage); eps = 0 merges nothing."""
    X = np.asarray(tuples, float)
    n = len(X)
    w = np.ones(n) if weights is None else np.asarray(weights, float)
    if n == 0:
        return SpectrumCloud(np.zeros((0, X.shape[1] if X.ndim == 2 else 0)), np.zeros(0), np.zeros(0, int))
    if eps > 0 and n > 1:
        raw = fcluster(linkage(X, method="single", metric="chebyshev"), t=eps, criterion="distance") - 1
    else:
        raw = np.arange(n)
    m = raw.max() + 1
    mult = np.bincount(raw, weights=w, minlength=m)
    pts = np.zeros((m, X.shape[1]))
    np.add.at(pts, raw, X * w[:, None])
    pts /= mult[:, None]
    order = np.lexsort(pts.T[::-1])
    rank = np.empty(m, int)
    rank[order] = np.arange(m)
    return SpectrumCloud(pts[order], mult[order], rank[raw])
