"""Discrete curl-space laboratory on a 3D box.

Fields live on the staggered complex nodes -> edges -> faces -> cells of a
uniform box grid.  Vector fields are represented by face fluxes; the curl
space is the range of CURL over all edges, equivalently the kernel of DIV
(the box is contractible).  Localized curl subspaces are generated by the
curls of edges lying in a metric neighborhood of a boundary face, and the
solenoidal eikonal is the Stieltjes sum over that nested family.

Operators restricted to the curl space are handled through an orthonormal
basis Q of it (faces x dim), so that an operator A from the curl space to
face fields is the matrix A Q and its singular values come from the
Gram matrix (A Q)^T (A Q).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .algebra import NestedFamily, nested_basis
from .geometry import box3d, eikonal, patch_catalog


class SolenoidalError(ValueError):
    pass


def _d(n: int) -> sp.csr_matrix:
    """(n-1) x n forward difference with integer entries."""
    return sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n), format="csr", dtype=np.int64)


def _i(n: int) -> sp.csr_matrix:
    return sp.identity(n, format="csr", dtype=np.int64)


def _k3(az, ay, ax) -> sp.csr_matrix:
    # x index runs fastest, matching the node order of the box manifold
    return sp.kron(az, sp.kron(ay, ax, format="csr"), format="csr")


@dataclass(frozen=True, eq=False)
class CurlComplex:
    shape: tuple[int, int, int]
    spacing: tuple[float, float, float]
    GRAD: sp.csr_matrix  # edges x nodes
    CURL: sp.csr_matrix  # faces x edges
    DIV: sp.csr_matrix  # cells x faces
    edge_nodes: np.ndarray  # (E, 2) endpoint node ids
    face_nodes: np.ndarray  # (F, 4) corner node ids
    face_centers: np.ndarray  # (F, 3)
    node_coords: np.ndarray  # (V, 3)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_faces(self) -> int:
        return self.CURL.shape[0]

    @property
    def curl_dim(self) -> int:
        """dim Ran CURL = dim Ker DIV = #faces - #cells (DIV is onto)."""
        return self.DIV.shape[1] - self.DIV.shape[0]

    def face_values(self, nodal: np.ndarray) -> np.ndarray:
        """Mean of a nodal function over the four corners of each face."""
        return np.asarray(nodal, float)[self.face_nodes].mean(axis=1)

    def face_function(self, f) -> np.ndarray:
        """Samples f(x, y, z) at face centers."""
        c = self.face_centers
        return np.broadcast_to(np.asarray(f(c[:, 0], c[:, 1], c[:, 2]), float), (len(c),)).copy()


def build_curl_complex(nx: int, ny: int, nz: int, lengths=(1.0, 1.0, 1.0)) -> CurlComplex:
    """Mimetic grad/curl/div on an nx x ny x nz node grid of the box [0, Lx] x [0, Ly] x [0, Lz].

    Edges are ordered x-edges, y-edges, z-edges; faces are ordered by normal
    direction x, y, z; within each block the x index runs fastest.  All three
    operators have integer entries, so CURL GRAD = 0 and DIV CURL = 0 hold
    exactly.  The face inner product is the Euclidean one: the grid is
    uniform, so area weights only rescale it.
    """
    if min(nx, ny, nz) < 3:
        raise SolenoidalError("each box dimension needs at least 3 nodes for a nontrivial curl space")
    Dx, Dy, Dz = _d(nx), _d(ny), _d(nz)
    Ix, Iy, Iz = _i(nx), _i(ny), _i(nz)
    Ix1, Iy1, Iz1 = _i(nx - 1), _i(ny - 1), _i(nz - 1)
    GRAD = sp.vstack([_k3(Iz, Iy, Dx), _k3(Iz, Dy, Ix), _k3(Dz, Iy, Ix)], format="csr")
    Z = lambda r, c: sp.csr_matrix((r, c), dtype=np.int64)  # noqa: E731
    nex, ney, nez = (nx - 1) * ny * nz, nx * (ny - 1) * nz, nx * ny * (nz - 1)
    fx = nx * (ny - 1) * (nz - 1)
    fy = (nx - 1) * ny * (nz - 1)
    fz = (nx - 1) * (ny - 1) * nz
    # (curl E)_x = d_y E_z - d_z E_y, and cyclically
    cx = sp.hstack([Z(fx, nex), -_k3(Dz, Iy1, Ix), _k3(Iz1, Dy, Ix)])
    cy = sp.hstack([_k3(Dz, Iy, Ix1), Z(fy, ney), -_k3(Iz1, Iy, Dx)])
    cz = sp.hstack([-_k3(Iz, Dy, Ix1), _k3(Iz, Iy1, Dx), Z(fz, nez)])
    CURL = sp.vstack([cx, cy, cz], format="csr")
    DIV = sp.hstack([_k3(Iz1, Iy1, Dx), _k3(Iz1, Dy, Ix1), _k3(Dz, Iy1, Ix1)], format="csr")

    h = tuple(float(L) / (n - 1) for L, n in zip(lengths, (nx, ny, nz)))
    idx = np.arange(nx * ny * nz).reshape(nz, ny, nx)
    zz, yy, xx = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    coords = np.column_stack([xx.ravel() * h[0], yy.ravel() * h[1], zz.ravel() * h[2]])
    edges = np.vstack([
        np.column_stack([idx[:, :, :-1].ravel(), idx[:, :, 1:].ravel()]),
        np.column_stack([idx[:, :-1, :].ravel(), idx[:, 1:, :].ravel()]),
        np.column_stack([idx[:-1, :, :].ravel(), idx[1:, :, :].ravel()]),
    ])
    faces = np.vstack([
        np.column_stack([idx[:-1, :-1, :].ravel(), idx[:-1, 1:, :].ravel(),
                         idx[1:, :-1, :].ravel(), idx[1:, 1:, :].ravel()]),
        np.column_stack([idx[:-1, :, :-1].ravel(), idx[:-1, :, 1:].ravel(),
                         idx[1:, :, :-1].ravel(), idx[1:, :, 1:].ravel()]),
        np.column_stack([idx[:, :-1, :-1].ravel(), idx[:, :-1, 1:].ravel(),
                         idx[:, 1:, :-1].ravel(), idx[:, 1:, 1:].ravel()]),
    ])
    centers = coords[faces].mean(axis=1)
    return CurlComplex((nx, ny, nz), h, GRAD, CURL, DIV, edges, faces, centers, coords)


def exactness_defects(cc: CurlComplex) -> tuple[int, int]:
    """max |entry| of CURL GRAD and of DIV CURL (integers; zero for an exact complex)."""
    a = (cc.CURL @ cc.GRAD).tocoo()
    b = (cc.DIV @ cc.CURL).tocoo()
    return (int(np.abs(a.data).max(initial=0)), int(np.abs(b.data).max(initial=0)))


@dataclass(frozen=True)
class HelmholtzCheck:
    face_dim: int
    potential_dim: int  # rank of DIV^T: gradients of cell potentials vanishing outside the box
    solenoidal_dim: int  # dim Ker DIV
    curl_rank: int
    orthogonality: float  # max |<grad part, solenoidal part>| / ||v||^2 over the probe fields
    divergence: float  # max |DIV (solenoidal part)| / ||v||


def helmholtz_check(cc: CurlComplex, n_probe: int = 4, seed: int = 0) -> HelmholtzCheck:
    """Split random face fields into Ran DIV^T + Ker DIV and verify the decomposition.

    Ran DIV^T is the discrete gradient of cell potentials with zero exterior
    values.  Also confirms Ker DIV = Ran CURL by a rank count.
    """
    from scipy.sparse.linalg import splu

    D = cc.DIV.astype(float).tocsc()
    F = D.shape[1]
    lu = splu((D @ D.T).tocsc())
    rng = np.random.default_rng(seed)
    orth, div = 0.0, 0.0
    for _ in range(n_probe):
        v = rng.standard_normal(F)
        g = D.T @ lu.solve(D @ v)
        w = v - g
        nv = float(v @ v)
        orth = max(orth, abs(float(g @ w)) / nv)
        div = max(div, float(np.abs(D @ w).max()) / np.sqrt(nv))
    # DIV has full row rank (its Gram matrix factored), so the dimension counts follow
    curl_rank = _sparse_rank(cc.CURL)
    return HelmholtzCheck(F, D.shape[0], F - D.shape[0], curl_rank, orth, div)


def _sparse_rank(A: sp.spmatrix) -> int:
    if A.shape[0] * A.shape[1] > 25_000_000:
        raise SolenoidalError("matrix too large for a dense rank count")
    return int(np.linalg.matrix_rank(A.toarray().astype(float)))


def edge_keys(cc: CurlComplex, tau: np.ndarray) -> np.ndarray:
    """Entrance key of each edge: the largest eikonal value over its endpoints.

    An edge lies in {tau < s} iff both endpoints do, i.e. iff its key is < s.
    """
    return np.asarray(tau, float)[cc.edge_nodes].max(axis=1)


def box_eikonals(cc: CurlComplex) -> dict[str, np.ndarray]:
    """Graph-distance eikonals of each box face, on the complex's nodes."""
    nx, ny, nz = cc.shape
    M = box3d(nx, ny, nz)
    return {p.id: eikonal(M, p).values for p in patch_catalog(M)}


def curl_family(cc: CurlComplex, tau: np.ndarray, s_grid, tol_rank: float = 1e-6) -> NestedFamily:
    """Nested orthonormal bases of the curl subspaces generated inside {tau < s}, one level per s."""
    keys = edge_keys(cc, tau)
    order = np.argsort(keys, kind="stable")
    X = cc.CURL.astype(float).tocsc()[:, order]
    return nested_basis(X, keys[order], np.asarray(s_grid, float), tol_rank)


def curl_subspace(cc: CurlComplex, tau: np.ndarray, s: float, tol_rank: float = 1e-6) -> np.ndarray:
    """Orthonormal basis (faces x r) of span{CURL e : edge e inside {tau < s}}."""
    fam = curl_family(cc, tau, [s], tol_rank)
    return fam.Q


@dataclass(frozen=True)
class SolenoidalEikonal:
    """eps = sum of s dY(s), diagonal in the nested basis Q of the curl space."""

    patch: str
    Q: np.ndarray  # faces x dim, orthonormal basis of the curl space
    values: np.ndarray  # eigenvalue attached to each column of Q

    @property
    def norm(self) -> float:
        return float(np.abs(self.values).max()) if len(self.values) else 0.0

    def matrix(self) -> np.ndarray:
        """Dense face-space matrix Q diag(values) Q^T (small grids only)."""
        return (self.Q * self.values) @ self.Q.T

    def in_basis(self, B: np.ndarray) -> np.ndarray:
        """Matrix of the eikonal in another orthonormal basis B of the same space: B^T eps B."""
        G = self.Q.T @ B
        return G.T @ (self.values[:, None] * G)


def solenoidal_eikonal(cc: CurlComplex, patch: str, tau: np.ndarray, s_grid,
                       tol_rank: float = 1e-6, rule: str = "upper") -> SolenoidalEikonal:
    s_grid = np.asarray(s_grid, float)
    if s_grid[-1] <= np.max(tau):
        raise SolenoidalError("s_grid must reach beyond the largest eikonal value")
    fam = curl_family(cc, tau, s_grid, tol_rank)
    if fam.Q.shape[1] != cc.curl_dim:
        raise SolenoidalError(f"saturated family has rank {fam.Q.shape[1]}, curl space has {cc.curl_dim}")
    return SolenoidalEikonal(patch, fam.Q, fam.entrance_values(rule))


@dataclass(frozen=True)
class CompactnessReport:
    label: str
    singular_values: np.ndarray  # descending
    dim: int

    @property
    def norm(self) -> float:
        return float(self.singular_values[0]) if len(self.singular_values) else 0.0

    def ratio(self, k: int) -> float:
        """sigma_k / sigma_1 with 1-based k."""
        s = self.singular_values
        if len(s) == 0 or s[0] == 0:
            return 0.0
        return float(s[min(max(k, 1), len(s)) - 1] / s[0])

    @property
    def tail_ratios(self) -> dict[int, float]:
        return {k: self.ratio(k) for k in (self.dim // 4, self.dim // 2, 3 * self.dim // 4)}

    @property
    def half_ratio(self) -> float:
        return self.ratio(self.dim // 2)


def _svals_from_gram(G: np.ndarray) -> np.ndarray:
    """Singular values from a Gram matrix, descending.

    Squaring loses half the digits: values below sqrt(n eps) sigma_1 are not
    resolved and are reported as exact zeros.
    """
    lam = np.linalg.eigvalsh(0.5 * (G + G.T))
    s = np.sqrt(np.clip(lam, 0.0, None))[::-1]
    if len(s):
        s[s < np.sqrt(len(s) * np.finfo(float).eps) * s[0]] = 0.0
    return s


def lemma_probe(eps: SolenoidalEikonal, tau_faces: np.ndarray) -> CompactnessReport:
    """Singular values of (eps - tau) restricted to the curl space, as a map into face fields.

    With M = Q diag(e) - D Q:  M^T M = diag(e)^2 - diag(e) A - A diag(e) + B,
    A = Q^T D Q, B = Q^T D^2 Q.
    """
    Q, e = eps.Q, eps.values
    DQ = tau_faces[:, None] * Q
    A = Q.T @ DQ
    B = DQ.T @ DQ
    del DQ
    G = B - e[:, None] * A - A * e[None, :]
    G[np.diag_indices_from(G)] += e * e
    return CompactnessReport(f"eps-tau[{eps.patch}]", _svals_from_gram(G), Q.shape[1])


def eff_probe(Q: np.ndarray, f_faces: np.ndarray, label: str = "f-Y[f]") -> CompactnessReport:
    """Singular values of y -> f y - P(f y) on the curl space: M^T M = Q^T f^2 Q - (Q^T f Q)^2."""
    FQ = f_faces[:, None] * Q
    A = Q.T @ FQ
    B = FQ.T @ FQ
    del FQ
    G = B - A @ A
    return CompactnessReport(label, _svals_from_gram(G), Q.shape[1])


def noncommutativity_probe(a: SolenoidalEikonal, b: SolenoidalEikonal) -> tuple[float, CompactnessReport]:
    """Relative spectral norm of [eps_a, eps_b] and the singular values of the commutator.

    Works in the basis of ``a``, where eps_a is diagonal: [A, B]_ij = (e_i - e_j) B_ij.
    The commutator of two symmetric matrices is antisymmetric, so its
    singular values are the square roots of the eigenvalues of -[A, B]^2.
    """
    Bm = b.in_basis(a.Q)
    e = a.values
    Cm = (e[:, None] - e[None, :]) * Bm
    del Bm
    G = Cm.T @ Cm
    del Cm
    rep = CompactnessReport(f"[eps_{a.patch}, eps_{b.patch}]", _svals_from_gram(G), a.Q.shape[1])
    denom = a.norm * b.norm
    return (rep.norm / denom if denom > 0 else 0.0), rep


def calkin_isometry_probe(Q: np.ndarray, f_faces: np.ndarray, k: int = 10) -> tuple[float, float]:
    """(sup |f|, k-th singular value of Y[f] = P f restricted to the curl space)."""
    A = Q.T @ (f_faces[:, None] * Q)
    s = np.sort(np.abs(np.linalg.eigvalsh(0.5 * (A + A.T))))[::-1]
    est = float(s[min(k, len(s)) - 1]) if len(s) else 0.0
    return float(np.abs(f_faces).max(initial=0.0)), est


@dataclass(frozen=True)
class BoxProbes:
    """All solenoidal diagnostics for one grid."""

    n: int
    curl_dim: int
    eps_norm: float
    tau_max: float
    eps_spectrum: tuple[float, float]
    lemma: CompactnessReport
    eff: CompactnessReport
    commutator_rel: float
    commutator: CompactnessReport
    calkin: tuple[float, float]


def run_box(n: int, face_a: str = "x0", face_b: str = "y0", ds_factor: float = 0.25,
            tol_rank: float = 1e-6, calkin_k: int = 10, f=None) -> BoxProbes:
    """Build the n^3 unit box complex and run every probe on it.

    ``f`` defaults to the first coordinate x_1.
    """
    f = f or (lambda x, y, z: x)
    cc = build_curl_complex(n, n, n)
    taus = box_eikonals(cc)
    h = cc.spacing[0]
    ds = ds_factor * h
    top = max(taus[face_a].max(), taus[face_b].max()) + 2 * ds
    s_grid = np.arange(0.0, top + 0.5 * ds, ds)
    ea = solenoidal_eikonal(cc, face_a, taus[face_a], s_grid, tol_rank)
    lem = lemma_probe(ea, cc.face_values(taus[face_a]))
    ff = cc.face_function(f)
    eff = eff_probe(ea.Q, ff, "f-Y[f]")
    cal = calkin_isometry_probe(ea.Q, ff, calkin_k)
    eb = solenoidal_eikonal(cc, face_b, taus[face_b], s_grid, tol_rank)
    rel, com = noncommutativity_probe(ea, eb)
    return BoxProbes(n, cc.curl_dim, ea.norm, float(taus[face_a].max()),
                     (float(ea.values.min()), float(ea.values.max())), lem, eff, rel, com, cal)


def strictly_decreasing(xs) -> bool:
    xs = list(xs)
    return all(b < a for a, b in zip(xs, xs[1:]))
