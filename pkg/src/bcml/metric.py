"""Metric recovery on the spectrum cloud: charts, gradients, inverse metric, copy distances.

Every point of the cloud carries a tuple of eikonal values, one per patch.
Around an anchor, n of these values serve as coordinates; the remaining
ones are functions of the coordinates whose gradients must have unit length,
which determines the inverse metric g^{ij} in least squares.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, dijkstra
from scipy.spatial import cKDTree

from .algebra import SpectrumCloud


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class Chart:
    anchor: int
    members: np.ndarray
    patches: tuple[int, ...]  # indices into the catalog
    coords: np.ndarray  # (len(members), n) coordinate values
    condition: float


@dataclass(frozen=True)
class MetricTensorField:
    inverse: np.ndarray  # (m, n, n) g^{ij}; NaN where unchartable
    residual: np.ndarray  # (m,) rms residual of the eikonal equations
    accepted: np.ndarray  # (m,) chart found, system solvable and g^{ij} positive definite
    non_pd: np.ndarray  # (m,) solved but not positive definite (flagged, never projected)
    charts: list = field(default_factory=list)


@dataclass(frozen=True)
class CopyManifold:
    tuples: np.ndarray  # (m, K)
    metric: MetricTensorField
    boundary: np.ndarray  # (m,) bool
    incidence: np.ndarray  # (m, K) bool: point lies on patch k
    distances: np.ndarray  # (m, m) graph distances, inf between components
    n_components: int


def _spacing(X: np.ndarray) -> float:
    if len(X) < 2:
        return 1.0
    d, _ = cKDTree(X).query(X, k=2, p=np.inf)
    med = float(np.median(d[:, 1]))
    return med if med > 0 else 1.0


def _neighbors(X: np.ndarray, k: int) -> np.ndarray:
    k = min(k, len(X))
    _, idx = cKDTree(X).query(X, k=k, p=np.inf)
    return np.asarray(idx).reshape(len(X), k)


def _fit(coords: np.ndarray, values: np.ndarray, w: np.ndarray):
    """Weighted affine fit; returns (gradient, rms residual) or None if rank deficient."""
    A = np.column_stack([np.ones(len(coords)), coords])
    sw = np.sqrt(w)
    Aw = A * sw[:, None]
    if np.linalg.matrix_rank(Aw, tol=1e-10 * max(1.0, np.abs(Aw).max())) < A.shape[1]:
        return None
    coef, *_ = np.linalg.lstsq(Aw, values * sw, rcond=None)
    res = values - A @ coef
    return coef[1:], float(np.sqrt(np.sum(w * res * res) / np.sum(w)))


def _neighborhoods(X: np.ndarray, k: int) -> list[np.ndarray]:
    """k nearest points (max norm) plus every point tied with the k-th, sorted by distance then index.

    Keeping ties makes the neighborhood of a lattice point symmetric.
    """
    k = min(k, len(X))
    tree = cKDTree(X)
    d, _ = tree.query(X, k=k, p=np.inf)
    d = np.asarray(d).reshape(len(X), k)
    out = []
    for a in range(len(X)):
        r = d[a, -1]
        idx = np.asarray(tree.query_ball_point(X[a], r * (1 + 1e-9) + 1e-14, p=np.inf), dtype=np.intp)
        dist = np.max(np.abs(X[idx] - X[a]), axis=1)
        out.append(idx[np.lexsort((idx, dist))])
    return out


def _weights(coords: np.ndarray, center: np.ndarray, bandwidth: float) -> np.ndarray:
    d = np.max(np.abs(coords - center), axis=1)
    return np.exp(-0.5 * (d / bandwidth) ** 2)


def build_chart(cloud: SpectrumCloud, anchor: int, dim: int, k_neighbors: int | None = None,
                cond_cap: float = 50.0, bandwidth: float | None = None,
                _nbrs: list | None = None) -> Chart | None:
    """Greedy choice of ``dim`` coordinate patches best conditioned at ``anchor``.

    Patches are added one at a time, each maximizing the smallest singular
    value of the normalized local design matrix; ties go to the lower patch
    index.  Returns None when no choice meets ``cond_cap``.
    """
    X = cloud.points
    k = k_neighbors or (4 * dim + 4)
    members = _nbrs[anchor] if _nbrs is not None else _neighborhoods(X, k)[anchor]
    h = bandwidth or 2.0 * _spacing(X)
    Y = X[members] - X[anchor]
    w = _weights(X[members], X[anchor], h)
    Yw = Y * np.sqrt(w)[:, None]
    norms = np.linalg.norm(Yw, axis=0)
    chosen: list[int] = []
    for _ in range(dim):
        best, best_val = None, -1.0
        for j in range(X.shape[1]):
            if j in chosen or norms[j] <= 1e-14:
                continue
            cols = chosen + [j]
            s = np.linalg.svd(Yw[:, cols] / norms[cols], compute_uv=False)
            if s[-1] > best_val + 1e-12:
                best, best_val = j, s[-1]
        if best is None:
            return None
        chosen.append(best)
    s = np.linalg.svd(Yw[:, chosen] / norms[chosen], compute_uv=False)
    cond = float(s[0] / s[-1]) if s[-1] > 0 else np.inf
    if cond > cond_cap:
        return None
    return Chart(int(anchor), np.asarray(members), tuple(chosen), X[members][:, chosen], cond)


def estimate_gradients(chart: Chart, values: np.ndarray, bandwidth: float):
    """Gradients at the anchor of each column of ``values`` (members x patches) in chart coordinates.

    Returns (grads (K, n), residuals (K,), valid (K,)).
    """
    center = chart.coords[list(chart.members).index(chart.anchor)]
    w = _weights(chart.coords, center, bandwidth)
    rel = chart.coords - center
    K = values.shape[1]
    n = chart.coords.shape[1]
    grads = np.full((K, n), np.nan)
    res = np.full(K, np.nan)
    valid = np.zeros(K, bool)
    for j in range(K):
        out = _fit(rel, values[:, j], w)
        if out is None:
            continue
        grads[j], res[j] = out
        valid[j] = True
    if not valid.any():
        raise MetricError(f"rank-deficient gradient fit at anchor {chart.anchor}")
    return grads, res, valid


def solve_metric(grads: np.ndarray):
    """Least-squares g^{ij} from sum_ij g^{ij} d_i d_j = 1 over the rows of ``grads``.

    Returns (g (n, n), rms residual) or None if the normal equations are singular.
    """
    m, n = grads.shape
    pairs = [(i, i) for i in range(n)] + list(combinations(range(n), 2))
    if m < len(pairs):
        return None
    A = np.column_stack([grads[:, i] * grads[:, j] * (1.0 if i == j else 2.0) for i, j in pairs])
    if np.linalg.matrix_rank(A, tol=1e-10 * max(1.0, np.abs(A).max())) < len(pairs):
        return None
    x, *_ = np.linalg.lstsq(A, np.ones(m), rcond=None)
    g = np.zeros((n, n))
    for v, (i, j) in zip(x, pairs):
        g[i, j] = g[j, i] = v
    return g, float(np.sqrt(np.mean((A @ x - 1.0) ** 2)))


def metric_field(cloud: SpectrumCloud, dim: int, k_neighbors: int | None = None,
                 cond_cap: float = 50.0) -> MetricTensorField:
    """Chart, gradients and inverse metric at every cloud point."""
    X = cloud.points
    m = len(X)
    k = k_neighbors or (4 * dim + 4)
    nbrs = _neighborhoods(X, k)
    h = 2.0 * _spacing(X)
    inv = np.full((m, dim, dim), np.nan)
    res = np.full(m, np.nan)
    acc = np.zeros(m, bool)
    nonpd = np.zeros(m, bool)
    charts = []
    for a in range(m):
        ch = build_chart(cloud, a, dim, k, cond_cap, h, nbrs)
        charts.append(ch)
        if ch is None:
            continue
        grads, _, valid = estimate_gradients(ch, X[ch.members], h)
        out = solve_metric(grads[valid])
        if out is None:
            continue
        g, r = out
        inv[a], res[a] = g, r
        if np.all(np.linalg.eigvalsh(g) > 0):
            acc[a] = True
        else:
            nonpd[a] = True
    return MetricTensorField(inv, res, acc, nonpd, charts)


def assemble_copy(cloud: SpectrumCloud, field_: MetricTensorField, boundary_eps: float,
                  k_neighbors: int | None = None, require_connected: bool = True) -> CopyManifold:
    """Copy with boundary labels and graph distances over k nearest accepted neighbors.

    An edge p-q has length averaged over both endpoint charts of
    sqrt(dc^T g_ij dc), dc the coordinate difference in that chart.  A
    disconnected neighbor graph raises unless ``require_connected`` is off.
    """
    X = cloud.points
    m, K = X.shape
    dim = field_.inverse.shape[1]
    k = k_neighbors or (2 * dim + 2)
    incidence = X <= boundary_eps * (1 + 1e-9)
    boundary = incidence.any(axis=1)
    ok = np.flatnonzero(field_.accepted)
    dist = np.full((m, m), np.inf)
    if len(ok) == 0:
        return CopyManifold(X, field_, boundary, incidence, dist, 0)
    lower = {int(p): np.linalg.inv(field_.inverse[p]) for p in ok}
    nb = _neighbors(X[ok], k + 1)
    rows, cols, vals = [], [], []
    for a_loc, a in enumerate(ok):
        for b_loc in nb[a_loc, 1:]:
            b = ok[b_loc]
            lens = []
            for p in (a, b):
                idx = list(field_.charts[p].patches)
                dc = X[b, idx] - X[a, idx]
                lens.append(np.sqrt(max(dc @ lower[int(p)] @ dc, 0.0)))
            rows.append(a_loc)
            cols.append(int(b_loc))
            vals.append(max(0.5 * (lens[0] + lens[1]), 1e-15))
    G = coo_matrix((vals, (rows, cols)), shape=(len(ok), len(ok))).tocsr()
    ncomp, lab = connected_components(G, directed=False)
    if ncomp > 1 and require_connected:
        sizes = sorted(np.bincount(lab).tolist(), reverse=True)
        raise MetricError(f"accepted points form {ncomp} components of sizes {sizes}")
    D = dijkstra(G, directed=False)
    dist[np.ix_(ok, ok)] = D
    return CopyManifold(X, field_, boundary, incidence, dist, int(ncomp))


def match_points(cloud_tuples: np.ndarray, true_tuples: np.ndarray) -> np.ndarray:
    """Index of the source vertex with the nearest eikonal tuple (sup norm) for each cloud point."""
    _, idx = cKDTree(true_tuples).query(cloud_tuples, k=1, p=np.inf)
    return np.asarray(idx, int)


@dataclass(frozen=True)
class DistanceComparison:
    sup_error: float
    relative_error: float  # ||D_copy - D_true||_F / ||D_true||_F over accepted pairs
    median_relative: float  # median |D_copy - D_true| / D_true over pairs with D_true > 0
    n_points: int


def compare_distances(copy: CopyManifold, true_dist: np.ndarray) -> DistanceComparison:
    """Compare copy distances with ground-truth distances of the matched source vertices."""
    ok = np.flatnonzero(copy.metric.accepted)
    Dc = copy.distances[np.ix_(ok, ok)]
    Dt = true_dist[np.ix_(ok, ok)]
    finite = np.isfinite(Dc)
    if not finite.all():
        return DistanceComparison(np.inf, np.inf, np.inf, len(ok))
    err = np.abs(Dc - Dt)
    pos = Dt > 0
    return DistanceComparison(
        float(err.max()) if err.size else 0.0,
        float(np.linalg.norm(Dc - Dt) / max(np.linalg.norm(Dt), 1e-300)),
        float(np.median(err[pos] / Dt[pos])) if pos.any() else 0.0,
        len(ok),
    )


def conformal_factor(copy: CopyManifold, positions: np.ndarray) -> np.ndarray:
    """Conformal factor at each accepted point from the recovered metric.

    ``positions`` are the Euclidean coordinates of the matched source vertices.
    With J = d(chart coords)/d(position) fitted locally, the metric in
    Euclidean coordinates is J^T g_ij J; the factor is sqrt of its mean
    diagonal.  NaN where unavailable.
    """
    X = copy.tuples
    m = len(X)
    out = np.full(m, np.nan)
    for a in np.flatnonzero(copy.metric.accepted):
        ch = copy.metric.charts[a]
        mem = ch.members
        rel = positions[mem] - positions[a]
        A = np.column_stack([np.ones(len(mem)), rel])
        if np.linalg.matrix_rank(A) < A.shape[1]:
            continue
        coef, *_ = np.linalg.lstsq(A, ch.coords, rcond=None)
        J = coef[1:].T  # (n chart, n pos)
        g_low = np.linalg.inv(copy.metric.inverse[a])
        ge = J.T @ g_low @ J
        out[a] = float(np.sqrt(max(np.mean(np.diag(ge)), 0.0)))
    return out
