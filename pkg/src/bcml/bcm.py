"""Boundary control pipeline: connecting operator from response data, model space, projections.

Everything here sees only boundary data (the response operator, the boundary
measure, the time grid).  The one exception is ``pushforward_check``, which
takes the true wave snapshots to validate the model against exact cutoffs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, eigh, solve_triangular

from .algebra import NestedFamily, nested_basis
from .wave import FIRST_NODE, ControlSpace, ResponseOperator, SubspaceSelector, trapezoid_weights


class BcmError(ValueError):
    pass


def odd_extension(f: np.ndarray, keep_center: bool = True) -> np.ndarray:
    """Nodal odd extension from [0, T] to [0, 2T] about t = T.

    Node N + m takes -f(T - m dt).  Node N keeps f(T) when ``keep_center``
    (then S*S = 2 I exactly for trapezoid weights), else it is set to zero,
    the strictly odd choice.
    """
    f = np.asarray(f, float)
    N = f.shape[0] - 1
    out = np.zeros((2 * N + 1,) + f.shape[1:])
    out[: N + 1] = f
    out[N + 1:] = -f[N - 1:: -1][:N]
    if not keep_center:
        out[N] = 0.0
    return out


def odd_extension_adjoint(g: np.ndarray) -> np.ndarray:
    """Adjoint of ``odd_extension`` for trapezoid-weighted inner products."""
    g = np.asarray(g, float)
    N = (g.shape[0] - 1) // 2
    w2 = trapezoid_weights(2 * N, 1.0)
    w1 = trapezoid_weights(N, 1.0)
    gw = g * w2.reshape((-1,) + (1,) * (g.ndim - 1))
    out = gw[: N + 1].copy()
    out[:N] -= gw[N + 1:][::-1]
    return out / w1.reshape((-1,) + (1,) * (g.ndim - 1))


def time_integrate(g: np.ndarray, dt: float, rule: str = "trapezoid") -> np.ndarray:
    """Cumulative integral from t = 0 along axis 0.

    ``trapezoid`` is the cumulative trapezoid rule.  ``leapfrog`` is the
    quadrature matched to the time stepping: out[n] = 2 dt * sum of g[m] over
    m <= n - 1 with m = n - 1 (mod 2), i.e. a same-parity midpoint rule
    lagged by one step.
    """
    g = np.asarray(g, float)
    out = np.zeros_like(g)
    if rule == "trapezoid":
        out[1:] = np.cumsum(0.5 * dt * (g[1:] + g[:-1]), axis=0)
    elif rule == "leapfrog":
        acc = np.zeros_like(g)
        acc[0] = g[0]
        if len(g) > 1:
            acc[1] = g[1]
        for n in range(2, len(g)):
            acc[n] = acc[n - 2] + g[n]
        out[1:] = 2.0 * dt * acc[:-1]
    else:
        raise BcmError(f"unknown quadrature {rule!r}")
    return out


@dataclass(frozen=True)
class ConnectingResult:
    matrix: np.ndarray  # symmetrized, rows test / columns input control
    asymmetry: float  # ||K - K^T||_F / ||K||_F before symmetrization


def _formula_factors(R: ResponseOperator, cs: ControlSpace, quadrature: str):
    """Input factor A = J S B and weighted test factor E = D S B over [0, 2T]."""
    if R.n_steps != 2 * cs.n_steps or not np.isclose(R.dt, cs.dt, rtol=1e-10):
        raise BcmError("response must cover [0, 2T] on the control time grid")
    if not np.array_equal(R.boundary_ids, cs.boundary_ids):
        raise BcmError("response and control space use different boundaries")
    if quadrature == "trapezoid":
        SB = odd_extension(cs.time_basis)  # (2N+1, n_t)
        w = trapezoid_weights(R.n_steps, R.dt)
    elif quadrature == "leapfrog":
        # interior states up to T never see f(T), so the strictly odd extension is admissible
        SB = odd_extension(cs.time_basis, keep_center=False)
        w = np.full(R.n_steps + 1, R.dt)
    else:
        raise BcmError(f"unknown quadrature {quadrature!r}")
    A = time_integrate(SB, cs.dt, quadrature)
    return A, SB * w[:, None]


def _finish(K: np.ndarray) -> ConnectingResult:
    nrm = np.linalg.norm(K)
    asym = float(np.linalg.norm(K - K.T) / nrm) if nrm > 0 else 0.0
    return ConnectingResult(0.5 * (K + K.T), asym)


def connecting_from_response(R: ResponseOperator, cs: ControlSpace,
                             quadrature: str = "leapfrog") -> ConnectingResult:
    """C = 1/2 (S^T)* R J S in the control basis, computed from response data only.

    With ``quadrature="leapfrog"`` the time integral J, the odd extension S and
    the inner product on [0, 2T] are the discrete versions under which the
    identity holds exactly for the leapfrog scheme (a lattice d'Alembert
    argument), so the only remaining error is roundoff.  ``"trapezoid"``
    is the generic first-order discretization.

    The kernel route uses the lag structure R[(c, n), (b, k)] = kernel[c, n - k, b],
    which avoids materializing the dense response matrix.
    """
    A, E = _formula_factors(R, cs, quadrature)
    nb, nt, N2 = cs.n_boundary, cs.n_time, R.n_steps
    a = cs.boundary_weights
    if R.form == "dense":
        D = R.matrix.reshape(nb, N2 + 1, nb, R.n_in)
        # contract input time, then output time
        Y = np.tensordot(D, A[FIRST_NODE:], axes=([3], [0]))  # (c, n, b, i)
        K4 = np.tensordot(E, Y, axes=([0], [1]))  # (j, c, b, i)
        K4 = K4.transpose(1, 0, 2, 3)
    else:
        Kern = R.kernel()  # (c, L, b)
        nL = Kern.shape[1]
        Ml = np.empty((nL, nt, nt))
        for L in range(nL):
            Ml[L] = E[FIRST_NODE + L:].T @ A[FIRST_NODE: N2 + 1 - L]
        K4 = np.tensordot(Kern, Ml, axes=([1], [0]))  # (c, b, j, i)
        K4 = K4.transpose(0, 2, 1, 3)
    K4 = 0.5 * a[:, None, None, None] * K4
    return _finish(K4.reshape(nb * nt, nb * nt))


@dataclass(frozen=True)
class ModelSpace:
    """Square root of the connecting operator and the model coordinates it induces.

    In whitened control coordinates (orthonormal for the control inner
    product) C = V diag(lambda) V^T and |W| = V diag(sqrt lambda) V^T.  The
    model space is R^rank; ``phi`` (rank x n_controls) maps basis control j to
    its model image, so that phi^T phi = C in the control basis.
    """

    basis: np.ndarray  # (n, rank) retained eigenvectors, orthonormal
    singular_values: np.ndarray  # sqrt of the retained eigenvalues, descending
    phi: np.ndarray  # (rank, n)
    clipped_mass: float

    @property
    def rank(self) -> int:
        return len(self.singular_values)

    def sqrt_matrix(self) -> np.ndarray:
        """|W| in whitened coordinates."""
        return (self.basis * self.singular_values) @ self.basis.T


def sqrt_psd(C: np.ndarray, gram: np.ndarray | None = None, tol_psd: float = 1e-8,
             max_clipped: float = 0.25) -> ModelSpace:
    """Factor a (nearly) PSD connecting operator.

    ``gram`` is the control-basis inner product; the operator is whitened
    against it first.  Eigenvalues below tol_psd * lambda_max are dropped;
    if the negative ones carry more than ``max_clipped`` of the spectral mass
    the data are rejected as broken.
    """
    C = 0.5 * (np.asarray(C, float) + np.asarray(C, float).T)
    n = len(C)
    if n == 0:
        return ModelSpace(np.zeros((0, 0)), np.zeros(0), np.zeros((0, 0)), 0.0)
    if gram is None or np.allclose(gram, np.diag(np.diag(gram))):
        d = np.ones(n) if gram is None else np.diag(gram)
        sd = np.sqrt(d)
        Ct = C / sd[:, None] / sd[None, :]
        back = lambda X: X * sd[None, :]  # noqa: E731
    else:
        Lc = cholesky(gram, lower=True)
        Ct = solve_triangular(Lc, solve_triangular(Lc, C, lower=True).T, lower=True).T
        Ct = 0.5 * (Ct + Ct.T)
        back = lambda X: X @ Lc.T  # noqa: E731
    lam, V = eigh(Ct)
    total = np.abs(lam).sum()
    clipped = float(-lam[lam < 0].sum() / total) if total > 0 else 0.0
    if clipped > max_clipped:
        raise BcmError(f"connecting operator is far from PSD: clipped mass {clipped:.3f}")
    order = np.argsort(lam, kind="stable")[::-1]
    lam, V = lam[order], V[:, order]
    keep = lam > tol_psd * max(lam[0], 0.0)
    lam, V = lam[keep], V[:, keep]
    sv = np.sqrt(lam)
    # C = L Ct L^T = (Lam^{1/2} V^T L^T)^T (Lam^{1/2} V^T L^T)
    return ModelSpace(V, sv, back(sv[:, None] * V.T), clipped)


def model_projection_family(ms: ModelSpace, cs: ControlSpace, selector: SubspaceSelector,
                            s_grid: np.ndarray, tol_rank: float = 1e-6) -> NestedFamily:
    """Nested projections P(s) onto span{phi_j : control j acts on the patch within time s}.

    ``selector`` holds every control of one patch (e.g. selected with
    s = inf); a control enters at the first grid value exceeding its action time.
    """
    idx = selector.indices
    keys = cs.action_times[idx % cs.n_time]
    return nested_basis(ms.phi[:, idx], keys, np.asarray(s_grid, float), tol_rank)


def pushforward_map(ms: ModelSpace, W_weighted: np.ndarray) -> np.ndarray:
    """U with W = U phi, from the true (weighted) control map; U is an isometry when the data are exact."""
    return np.linalg.lstsq(ms.phi.T, W_weighted.T, rcond=None)[0].T


def pushforward_check(ms: ModelSpace, cs: ControlSpace, selector: SubspaceSelector, U: np.ndarray,
                      coeffs: np.ndarray, snapshot_true: np.ndarray, tau: np.ndarray,
                      vertex_weights: np.ndarray, s_values, tol_rank: float = 1e-6) -> dict[float, float]:
    """Relative error of U P(s) phi c against the exact cutoff 1_{tau < s} u^c(T), per s.

    Projections are built at exactly the requested s, not at a grid value.
    """
    sw = np.sqrt(vertex_weights)
    u_w = snapshot_true * sw
    z = ms.phi @ coeffs
    out = {}
    for s in s_values:
        fam = model_projection_family(ms, cs, selector, np.array([float(s)]), tol_rank)
        pushed = U @ fam.project(z, 0) if fam.Q.shape[1] else np.zeros_like(u_w)
        exact = np.where(tau < s, u_w, 0.0)
        out[float(s)] = float(np.linalg.norm(pushed - exact) / np.linalg.norm(u_w))
    return out
