"""Forward acoustic system: boundary controls, leapfrog solves, response data.

Controls are nodal values on the boundary vertices at the time nodes
``t_k = k dt``; the scheme only ever samples them there.  A basis control is a
boundary vertex times a time hat (``stride`` steps wide, ending at ``T``) and
must vanish at the first two nodes so that zero Cauchy data stay consistent.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix, diags, identity

from . import kernels
from .geometry import BoundaryPatch, DiscreteManifold

FIRST_NODE = 2
_CHUNK = 256


class WaveError(ValueError):
    pass


def laplacian(M: DiscreteManifold) -> csr_matrix:
    """Metric graph Laplacian; rows of boundary vertices are zero (Dirichlet)."""
    if "lap" not in M._cache:
        n = M.n_vertices
        i, j = M.edges[:, 0], M.edges[:, 1]
        k = M.edge_coupling
        A = csr_matrix((np.concatenate([k, k]), (np.concatenate([i, j]), np.concatenate([j, i]))), shape=(n, n))
        Lap = diags(1.0 / M.vertex_weights) @ (A - diags(np.asarray(A.sum(axis=1)).ravel()))
        keep = np.ones(n)
        keep[M.boundary_ids] = 0.0
        Lap = csr_matrix(diags(keep) @ Lap)
        Lap.sort_indices()
        M._cache["lap"] = Lap
    return M._cache["lap"]


def stiffness(M: DiscreteManifold) -> csr_matrix:
    n = M.n_vertices
    i, j = M.edges[:, 0], M.edges[:, 1]
    k = M.edge_coupling
    A = csr_matrix((np.concatenate([k, k]), (np.concatenate([i, j]), np.concatenate([j, i]))), shape=(n, n))
    return csr_matrix(diags(np.asarray(A.sum(axis=1)).ravel()) - A)


def stability_bound(M: DiscreteManifold, cfl_safety: float = 0.5) -> float:
    """Largest admissible step: min of the configured CFL bound and the Gershgorin bound."""
    n = M.n_vertices
    row = np.zeros(n)
    np.add.at(row, M.edges[:, 0], M.edge_coupling)
    np.add.at(row, M.edges[:, 1], M.edge_coupling)
    lam = float(np.max(2.0 * row / M.vertex_weights))
    return min(cfl_safety * M.h_min, 2.0 / np.sqrt(lam))


def check_dt(M: DiscreteManifold, dt: float, cfl_safety: float = 0.5) -> None:
    bound = stability_bound(M, cfl_safety)
    if not dt > 0 or dt > bound * (1 + 1e-12):
        raise WaveError(f"dt={dt:.6g} violates the stability bound dt <= {bound:.6g}")


def neumann_trace(M: DiscreteManifold) -> csr_matrix:
    """Outward normal derivative at each boundary vertex as the scheme's discrete flux.

    (1 / a_b) * sum over interior neighbors v of kappa_bv (u_b - u_v).  On a
    grid this is the first-order one-sided difference; a vertex without
    interior neighbors (a box corner) has zero flux.
    """
    if "trace" not in M._cache:
        interior = ~M.is_boundary
        pos = -np.ones(M.n_vertices, int)
        pos[M.boundary_ids] = np.arange(len(M.boundary_ids))
        rows, cols, vals = [], [], []
        for (a, b), k in zip(M.edges, M.edge_coupling):
            for x, y in ((a, b), (b, a)):
                if pos[x] >= 0 and interior[y]:
                    r = pos[x]
                    rows += [r, r]
                    cols += [int(x), int(y)]
                    vals += [k / M.boundary_weights[r], -k / M.boundary_weights[r]]
        T = csr_matrix((vals, (rows, cols)), shape=(len(M.boundary_ids), M.n_vertices))
        T.sum_duplicates()
        M._cache["trace"] = T
    return M._cache["trace"]


def trapezoid_weights(n_steps: int, dt: float) -> np.ndarray:
    w = np.full(n_steps + 1, dt)
    w[0] = w[-1] = dt / 2
    return w


@dataclass(frozen=True, eq=False)
class ControlSpace:
    boundary_ids: np.ndarray
    boundary_weights: np.ndarray
    dt: float
    n_steps: int
    stride: int = 1
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def T(self) -> float:
        return self.n_steps * self.dt

    @property
    def n_boundary(self) -> int:
        return len(self.boundary_ids)

    @property
    def centers(self) -> np.ndarray:
        # hats end at T; first nonzero node must be >= FIRST_NODE
        m = self.stride
        c = np.arange(self.n_steps, FIRST_NODE + m - 2, -m)[::-1]
        if len(c) == 0:
            raise WaveError("time horizon too short for any control")
        return c

    @property
    def n_time(self) -> int:
        return len(self.centers)

    @property
    def size(self) -> int:
        return self.n_boundary * self.n_time

    @property
    def time_basis(self) -> np.ndarray:
        """(n_steps + 1, n_time) nodal values of the time hats."""
        if "Bt" not in self._cache:
            m = self.stride
            k = np.arange(self.n_steps + 1)[:, None]
            self._cache["Bt"] = np.clip(1.0 - np.abs(k - self.centers[None, :]) / m, 0.0, None)
        return self._cache["Bt"]

    @property
    def time_weights(self) -> np.ndarray:
        return trapezoid_weights(self.n_steps, self.dt)

    @property
    def time_gram(self) -> np.ndarray:
        Bt = self.time_basis
        return Bt.T @ (self.time_weights[:, None] * Bt)

    @property
    def gram(self) -> np.ndarray:
        """Inner-product matrix of the basis in L2(boundary x [0, T])."""
        return np.kron(np.diag(self.boundary_weights), self.time_gram)

    @property
    def action_times(self) -> np.ndarray:
        """Per time hat: T minus the time of its first nonzero node."""
        first = self.centers - self.stride + 1
        return (self.n_steps - first) * self.dt

    def index(self, b: int, i: int) -> int:
        return b * self.n_time + i

    def nodal(self, coeffs: np.ndarray) -> np.ndarray:
        """Coefficients (size,) or (size, R) -> nodal values (n_steps+1, n_b[, R])."""
        c = np.asarray(coeffs, float)
        tail = c.shape[1:]
        c = c.reshape((self.n_boundary, self.n_time) + tail)
        return np.einsum("ki,bi...->kb...", self.time_basis, c)


def control_space(M: DiscreteManifold, T: float, dt: float | None = None, cfl_safety: float = 0.5,
                  stride: int = 1, snap: str = "dt") -> ControlSpace:
    """Control space on the boundary of ``M`` over [0, T].

    With ``snap="dt"`` the step shrinks to T / n_steps.  With ``snap="T"``
    the step is kept and the horizon grows to the next multiple of it; on a
    uniform 1D grid with dt equal to the edge length the leapfrog scheme is
    then exact d'Alembert propagation.
    """
    if T <= 0:
        raise WaveError("T must be positive")
    if dt is None:
        dt = stability_bound(M, cfl_safety)
    check_dt(M, dt, cfl_safety)
    n = int(np.ceil(T / dt - 1e-9))
    if snap == "dt":
        dt = T / n
    elif snap != "T":
        raise WaveError(f"unknown snap mode {snap!r}")
    return ControlSpace(M.boundary_ids.copy(), M.boundary_weights.copy(), float(dt), n, int(stride))


@dataclass(frozen=True)
class SubspaceSelector:
    patch: str
    s: float
    indices: np.ndarray


def select(cs: ControlSpace, patch: BoundaryPatch, s: float) -> SubspaceSelector:
    """Basis controls supported in patch x [T - s, T] (judged at the time nodes)."""
    pos = np.flatnonzero(np.isin(cs.boundary_ids, patch.vertex_ids))
    times = np.flatnonzero(cs.action_times < s - 1e-12 * max(cs.T, 1.0))
    idx = (pos[:, None] * cs.n_time + times[None, :]).ravel()
    return SubspaceSelector(patch.id, float(s), np.sort(idx))


@dataclass(frozen=True)
class WaveTrajectory:
    dt: float
    snapshots: np.ndarray  # (n_steps + 1, V)


def _run(M: DiscreteManifold, bvals: np.ndarray, dt: float, probe: csr_matrix, cfl_safety: float):
    check_dt(M, dt, cfl_safety)
    if np.any(bvals[:FIRST_NODE] != 0):
        raise WaveError("controls must vanish at t = 0 and t = dt")
    L = laplacian(M)
    probe = csr_matrix(probe)
    out = np.zeros((bvals.shape[0], probe.shape[0], bvals.shape[2]))
    final = kernels.leapfrog(
        L.indptr.astype(np.int32), L.indices.astype(np.int32), L.data.astype(float), float(dt * dt),
        M.boundary_ids.astype(np.int64), np.ascontiguousarray(bvals, float),
        probe.indptr.astype(np.int32), probe.indices.astype(np.int32), probe.data.astype(float), out,
    )
    return out, np.asarray(final)


def solve_wave(M: DiscreteManifold, f: np.ndarray, dt: float, cfl_safety: float = 0.5) -> WaveTrajectory:
    """Solve with Dirichlet data ``f`` of shape (n_steps + 1, n_b) and zero Cauchy data."""
    f = np.asarray(f, float)
    if f.ndim != 2 or f.shape[1] != len(M.boundary_ids):
        raise WaveError("f must have shape (n_steps + 1, n_boundary)")
    out, _ = _run(M, f[:, :, None], dt, identity(M.n_vertices, format="csr"), cfl_safety)
    return WaveTrajectory(dt, out[:, :, 0])


def _basis_bvals(cs: ControlSpace, cols: np.ndarray, n_steps: int) -> np.ndarray:
    bv = np.zeros((n_steps + 1, cs.n_boundary, len(cols)))
    Bt = cs.time_basis
    for r, j in enumerate(cols):
        b, i = divmod(int(j), cs.n_time)
        bv[: cs.n_steps + 1, b, r] = Bt[:, i]
    return bv


def control_map(M: DiscreteManifold, cs: ControlSpace, cfl_safety: float = 0.5,
                weighted: bool = False) -> np.ndarray:
    """Final snapshots u^{f_j}(T) of every basis control as columns (V, size).

    With ``weighted`` the rows carry sqrt(vertex weight) and boundary rows are
    dropped to zero: the state of the scheme lives on interior vertices, the
    boundary values being the control itself.  Then W^T W is the Gram matrix.
    """
    W = np.zeros((M.n_vertices, cs.size))
    none = csr_matrix((0, M.n_vertices))
    for start in range(0, cs.size, _CHUNK):
        cols = np.arange(start, min(start + _CHUNK, cs.size))
        _, final = _run(M, _basis_bvals(cs, cols, cs.n_steps), cs.dt, none, cfl_safety)
        W[:, cols] = final
    if weighted:
        W *= np.sqrt(M.vertex_weights)[:, None]
        W[M.boundary_ids] = 0.0
    return W


def gram_connecting_oracle(M: DiscreteManifold, cs: ControlSpace, cfl_safety: float = 0.5) -> np.ndarray:
    """Direct Gram matrix (u^{f_i}(T), u^{f_j}(T)) over the interior state space."""
    W = control_map(M, cs, cfl_safety, weighted=True)
    C = W.T @ W
    return 0.5 * (C + C.T)


@dataclass(frozen=True)
class ResponseOperator:
    """Boundary response on Gamma x [0, n_steps dt].

    ``form == "dense"``: rows (b_out, node), columns the nodal controls
    (b_in, node) for nodes FIRST_NODE..n_steps.  ``form == "kernel"``: rows
    (b_out, lag), columns b_in; the response to a unit nodal control, valid
    because the scheme is time invariant.
    """

    matrix: np.ndarray
    form: str
    dt: float
    n_steps: int
    boundary_ids: np.ndarray
    boundary_weights: np.ndarray

    @property
    def n_boundary(self) -> int:
        return len(self.boundary_ids)

    @property
    def n_in(self) -> int:
        return self.n_steps + 1 - FIRST_NODE

    def kernel(self) -> np.ndarray:
        """(b_out, lag, b_in) impulse responses."""
        nb = self.n_boundary
        if self.form == "kernel":
            return self.matrix.reshape(nb, self.n_in, nb)
        D = self.matrix.reshape(nb, self.n_steps + 1, nb, self.n_in)
        return D[:, FIRST_NODE:, :, 0]

    def dense(self) -> np.ndarray:
        if self.form == "dense":
            return self.matrix
        nb, n_in, N = self.n_boundary, self.n_in, self.n_steps
        Kn = self.kernel()
        D = np.zeros((nb, N + 1, nb, n_in))
        for i in range(n_in):
            k = FIRST_NODE + i
            D[:, k:, :, i] = Kn[:, : N + 1 - k, :]
        return D.reshape(nb * (N + 1), nb * n_in)

    def scaled(self, alpha: float) -> "ResponseOperator":
        return ResponseOperator(alpha * self.matrix, self.form, self.dt, self.n_steps,
                                self.boundary_ids, self.boundary_weights)

    def apply(self, g: np.ndarray) -> np.ndarray:
        """Response to nodal controls g of shape (n_steps + 1, n_b); returns the same shape."""
        g = np.asarray(g, float)
        if np.any(g[:FIRST_NODE] != 0):
            raise WaveError("controls must vanish at t = 0 and t = dt")
        x = g[FIRST_NODE:].T.reshape(-1)
        y = self.dense() @ x
        return y.reshape(self.n_boundary, self.n_steps + 1).T


def response_matrix(M: DiscreteManifold, dt: float, n_steps: int, cfl_safety: float = 0.5,
                    form: str = "dense") -> ResponseOperator:
    """Neumann response over [0, n_steps dt].

    ``dense`` runs one forward solve per nodal basis control; ``kernel`` runs one
    per boundary vertex and stores the impulse responses.
    """
    nb = len(M.boundary_ids)
    n_in = n_steps + 1 - FIRST_NODE
    if n_in <= 0:
        raise WaveError("horizon too short")
    trace = neumann_trace(M)
    if form == "kernel":
        bv = np.zeros((n_steps + 1, nb, nb))
        bv[FIRST_NODE] = np.eye(nb)
        out, _ = _run(M, bv, dt, trace, cfl_safety)
        Kn = out[FIRST_NODE:].transpose(1, 0, 2)  # (b_out, lag, b_in)
        mat = Kn.reshape(nb * n_in, nb)
    elif form == "dense":
        mat = np.zeros((nb * (n_steps + 1), nb * n_in))
        cols = np.arange(nb * n_in)
        for start in range(0, len(cols), _CHUNK):
            c = cols[start:start + _CHUNK]
            bv = np.zeros((n_steps + 1, nb, len(c)))
            b, i = np.divmod(c, n_in)
            bv[FIRST_NODE + i, b, np.arange(len(c))] = 1.0
            out, _ = _run(M, bv, dt, trace, cfl_safety)
            mat[:, c] = out.transpose(1, 0, 2).reshape(nb * (n_steps + 1), len(c))
    else:
        raise WaveError(f"unknown response form {form!r}")
    return ResponseOperator(mat, form, float(dt), int(n_steps), M.boundary_ids.copy(),
                            M.boundary_weights.copy())


def discrete_energy(M: DiscreteManifold, u_prev: np.ndarray, u_next: np.ndarray, dt: float) -> float:
    """Leapfrog-conserved energy between two consecutive states."""
    v = (u_next - u_prev) / dt
    K = stiffness(M)
    return float(0.5 * np.sum(M.vertex_weights * v * v) + 0.5 * u_next @ (K @ u_prev))
