"""Discrete manifolds with boundary, graph eikonals and metric neighborhoods.

A manifold is a weighted grid graph: every edge carries its Riemannian
length and a coupling coefficient (dual measure over length) used by the
wave operator, every vertex carries a quadrature weight.  Grid vertices are
numbered with the x index running fastest.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

ScalarField = Callable[..., np.ndarray]

_SAFE_NAMES = {
    name: getattr(np, name)
    for name in ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "pi", "tanh", "cosh", "sinh")
}


class GeometryError(ValueError):
    pass


def parse_field(expr: str | float | ScalarField) -> ScalarField:
    """Turn a number, callable or expression string in x, y, z into a vectorized field."""
    if callable(expr):
        return expr
    if isinstance(expr, (int, float)):
        value = float(expr)
        return lambda *xs: np.full(np.shape(xs[0]), value)
    code = compile(str(expr), "<field>", "eval")
    for name in code.co_names:
        if name not in _SAFE_NAMES and name not in ("x", "y", "z"):
            raise GeometryError(f"unknown name {name!r} in field expression {expr!r}")

    def f(x, y=None, z=None):
        env = dict(_SAFE_NAMES, x=x, y=y, z=z)
        return np.broadcast_to(np.asarray(eval(code, {"__builtins__": {}}, env), float), np.shape(x)).copy()

    return f


@dataclass(frozen=True, eq=False)
class DiscreteManifold:
    dim: int
    coords: np.ndarray  # (V, dim)
    edges: np.ndarray  # (E, 2) vertex pairs
    edge_lengths: np.ndarray  # Riemannian length per edge
    edge_coupling: np.ndarray  # dual measure / length, enters the Laplacian
    boundary_ids: np.ndarray  # sorted vertex indices on the boundary
    vertex_weights: np.ndarray  # volume element per vertex
    boundary_weights: np.ndarray  # boundary measure per boundary vertex
    shape: tuple[int, ...]
    kind: str
    extent: tuple[float, ...]
    factor: object = None  # conformal factor (or 1/speed in 1D) the grid was sampled from
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_vertices(self) -> int:
        return len(self.coords)

    @property
    def h(self) -> float:
        """Largest edge length."""
        return float(self.edge_lengths.max())

    @property
    def h_min(self) -> float:
        return float(self.edge_lengths.min())

    @property
    def is_boundary(self) -> np.ndarray:
        mask = np.zeros(self.n_vertices, bool)
        mask[self.boundary_ids] = True
        return mask

    def adjacency(self) -> csr_matrix:
        if "adj" not in self._cache:
            n = self.n_vertices
            i, j = self.edges[:, 0], self.edges[:, 1]
            w = self.edge_lengths
            self._cache["adj"] = csr_matrix(
                (np.concatenate([w, w]), (np.concatenate([i, j]), np.concatenate([j, i]))), shape=(n, n)
            )
        return self._cache["adj"]

    def validate(self) -> None:
        if np.any(self.edge_lengths <= 0):
            raise GeometryError("edge lengths must be positive")
        if np.any(self.vertex_weights <= 0):
            raise GeometryError("vertex weights must be positive")
        if len(self.boundary_ids) == 0:
            raise GeometryError("boundary is empty")
        ncomp, _ = connected_components(self.adjacency(), directed=False)
        if ncomp != 1:
            raise GeometryError(f"graph has {ncomp} components")


@dataclass(frozen=True)
class BoundaryPatch:
    id: str
    vertex_ids: np.ndarray
    connected: bool = True


@dataclass(frozen=True)
class EikonalField:
    patch: str
    values: np.ndarray


@dataclass(frozen=True)
class CutoffFamily:
    patch: str
    s_grid: np.ndarray
    indicators: np.ndarray  # (len(s_grid), V) of 0/1


def _check_size(*ns: int) -> None:
    for n in ns:
        if int(n) != n or n < 3:
            raise GeometryError(f"grid sizes must be integers >= 3, got {ns}")


def _gauss_length(f: ScalarField, a: np.ndarray, b: np.ndarray, order: int = 8) -> np.ndarray:
    # Riemannian length of [a, b] with density f
    t, w = np.polynomial.legendre.leggauss(order)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    pts = mid[:, None] + half[:, None] * t[None, :]
    return half * (f(pts) * w[None, :]).sum(axis=1)


def interval(n: int, length: float = 1.0, speed: str | float | ScalarField = 1.0) -> DiscreteManifold:
    """Interval [0, length] with wave speed c(x); edge length is the integral of dx/c."""
    _check_size(n)
    if length <= 0:
        raise GeometryError("length must be positive")
    c = parse_field(speed)
    x = np.linspace(0.0, length, n)
    probe = c(np.linspace(0.0, length, 8 * n + 1))
    if np.any(~np.isfinite(probe)) or np.any(probe <= 0):
        raise GeometryError("speed profile must be positive")
    edges = np.column_stack([np.arange(n - 1), np.arange(1, n)])
    lengths = _gauss_length(lambda s: 1.0 / c(s), x[:-1], x[1:])
    vw = np.zeros(n)
    np.add.at(vw, edges[:, 0], lengths / 2)
    np.add.at(vw, edges[:, 1], lengths / 2)
    M = DiscreteManifold(
        dim=1,
        coords=x[:, None],
        edges=edges,
        edge_lengths=lengths,
        edge_coupling=1.0 / lengths,
        boundary_ids=np.array([0, n - 1]),
        vertex_weights=vw,
        boundary_weights=np.ones(2),
        shape=(n,),
        kind="interval",
        extent=(float(length),),
        factor=lambda s: 1.0 / c(s),
    )
    M.validate()
    return M


def _grid_edges(shape: tuple[int, ...]) -> list[tuple[int, np.ndarray]]:
    """Axis-aligned edges of a grid, returned per axis as (axis, (E, 2) pairs)."""
    idx = np.arange(int(np.prod(shape))).reshape(shape[::-1])  # [z][y][x]
    out = []
    for axis in range(len(shape)):
        ax = len(shape) - 1 - axis
        a = np.take(idx, np.arange(shape[axis] - 1), axis=ax).ravel()
        b = np.take(idx, np.arange(1, shape[axis]), axis=ax).ravel()
        out.append((axis, np.column_stack([a, b])))
    return out


def _grid_manifold(shape, extent, factor: ScalarField, kind: str) -> DiscreteManifold:
    dim = len(shape)
    axes = [np.linspace(0.0, L, n) for n, L in zip(shape, extent)]
    spacing = np.array([L / (n - 1) for n, L in zip(shape, extent)])
    mesh = np.meshgrid(*axes, indexing="ij")
    coords = np.column_stack([m.transpose(*range(dim)[::-1]).ravel() for m in mesh])
    rho_v = factor(*coords.T)
    if np.any(~np.isfinite(rho_v)) or np.any(rho_v <= 0):
        raise GeometryError("conformal factor must be positive")
    # index in each axis, used for boundary tests and half-cell weights
    ijk = np.column_stack(
        [np.rint(coords[:, a] / spacing[a]).astype(int) for a in range(dim)]
    )
    on_face = np.zeros((len(coords), dim), bool)
    for a in range(dim):
        on_face[:, a] = (ijk[:, a] == 0) | (ijk[:, a] == shape[a] - 1)
    cell_frac = np.prod(np.where(on_face, 0.5, 1.0), axis=1)
    vertex_weights = cell_frac * np.prod(spacing) * rho_v**dim

    all_edges, lengths, coupling = [], [], []
    for axis, pairs in _grid_edges(shape):
        mid = 0.5 * (coords[pairs[:, 0]] + coords[pairs[:, 1]])
        rho_m = factor(*mid.T)
        if np.any(rho_m <= 0):
            raise GeometryError("conformal factor must be positive")
        ell = rho_m * spacing[axis]
        # dual (dim-1)-measure: product of the other spacings, halved on boundary faces
        others = [b for b in range(dim) if b != axis]
        frac = np.ones(len(pairs))
        for b in others:
            frac *= np.where(on_face[pairs[:, 0], b], 0.5, 1.0)
        dual = frac * np.prod(spacing[others]) * rho_m ** (dim - 1)
        all_edges.append(pairs)
        lengths.append(ell)
        coupling.append(dual / ell)
    edges = np.concatenate(all_edges)
    lengths = np.concatenate(lengths)
    coupling = np.concatenate(coupling)

    boundary = np.flatnonzero(on_face.any(axis=1))
    # boundary measure: half of each incident boundary (dim-1)-cell
    bweights = _boundary_measure(coords, ijk, on_face, shape, spacing, rho_v, boundary)
    M = DiscreteManifold(
        dim=dim,
        coords=coords,
        edges=edges,
        edge_lengths=lengths,
        edge_coupling=coupling,
        boundary_ids=boundary,
        vertex_weights=vertex_weights,
        boundary_weights=bweights,
        shape=tuple(int(n) for n in shape),
        kind=kind,
        extent=tuple(float(L) for L in extent),
        factor=factor,
    )
    M.validate()
    return M


def _boundary_measure(coords, ijk, on_face, shape, spacing, rho_v, boundary):
    dim = len(shape)
    out = np.zeros(len(boundary))
    for a in range(dim):
        for side in (0, shape[a] - 1):
            sel = ijk[boundary, a] == side
            frac = np.ones(sel.sum())
            for b in range(dim):
                if b == a:
                    continue
                frac *= np.where(on_face[boundary[sel], b], 0.5, 1.0)
            other = [b for b in range(dim) if b != a]
            out[sel] += frac * np.prod(spacing[other]) * rho_v[boundary[sel]] ** (dim - 1)
    return out


def rect2d(nx: int, ny: int, factor: str | float | ScalarField = 1.0,
           lx: float | None = None, ly: float | None = None) -> DiscreteManifold:
    """Rectangle with metric factor(x, y)^2 (dx^2 + dy^2); unit grid spacing unless lx/ly given."""
    _check_size(nx, ny)
    lx = float(nx - 1) if lx is None else float(lx)
    ly = float(ny - 1) if ly is None else float(ly)
    if lx <= 0 or ly <= 0:
        raise GeometryError("extent must be positive")
    return _grid_manifold((nx, ny), (lx, ly), parse_field(factor), "rect2d")


def box3d(nx: int, ny: int, nz: int, lx: float = 1.0, ly: float = 1.0, lz: float = 1.0) -> DiscreteManifold:
    """Flat box [0, lx] x [0, ly] x [0, lz]."""
    _check_size(nx, ny, nz)
    return _grid_manifold((nx, ny, nz), (lx, ly, lz), parse_field(1.0), "box3d")


def build_manifold(spec: dict) -> DiscreteManifold:
    """Build from a manifold spec mapping, e.g. ``{"kind": "interval", "n": 64}``."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind == "interval":
        return interval(int(spec["n"]), float(spec.get("length", 1.0)), spec.get("speed", 1.0))
    if kind == "rect2d":
        lx, ly = spec.get("lx"), spec.get("ly")
        return rect2d(int(spec["nx"]), int(spec["ny"]), spec.get("factor", 1.0),
                      None if lx is None else float(lx), None if ly is None else float(ly))
    if kind == "box3d":
        return box3d(int(spec["nx"]), int(spec["ny"]), int(spec["nz"]),
                     float(spec.get("lx", 1.0)), float(spec.get("ly", 1.0)), float(spec.get("lz", 1.0)))
    raise GeometryError(f"unknown manifold kind {kind!r}")


def _boundary_connected(M: DiscreteManifold, ids: np.ndarray) -> bool:
    if len(ids) == 1:
        return True
    sub = M.adjacency()[ids][:, ids]
    return connected_components(sub, directed=False)[0] == 1


def make_patch(M: DiscreteManifold, pid: str, vertex_ids: Sequence[int]) -> BoundaryPatch:
    ids = np.unique(np.asarray(vertex_ids, int))
    if len(ids) == 0:
        raise GeometryError(f"patch {pid!r} is empty")
    if not np.all(M.is_boundary[ids]):
        raise GeometryError(f"patch {pid!r} contains interior vertices")
    return BoundaryPatch(pid, ids, _boundary_connected(M, ids))


def patch_catalog(M: DiscreteManifold) -> list[BoundaryPatch]:
    """Endpoints in 1D; sides and half-sides of a rectangle; faces of a box."""
    if M.kind == "interval":
        return [make_patch(M, "left", [0]), make_patch(M, "right", [M.n_vertices - 1])]
    ijk = np.column_stack(
        [np.rint(M.coords[:, a] / (M.extent[a] / (M.shape[a] - 1))).astype(int) for a in range(M.dim)]
    )
    names = "xyz"
    patches = []
    for a in range(M.dim):
        for side, tag in ((0, "0"), (M.shape[a] - 1, "1")):
            face = np.flatnonzero(ijk[:, a] == side)
            patches.append(make_patch(M, f"{names[a]}{tag}", face))
    if M.kind == "rect2d":
        halves = []
        for p in patches:
            a = names.index(p.id[0])
            b = 1 - a
            nb = M.shape[b]
            lo = p.vertex_ids[ijk[p.vertex_ids, b] < (nb + 1) // 2]
            hi = p.vertex_ids[ijk[p.vertex_ids, b] >= nb // 2]
            halves.append(make_patch(M, p.id + "a", lo))
            halves.append(make_patch(M, p.id + "b", hi))
        patches += halves
    return patches


def eikonal(M: DiscreteManifold, patch: BoundaryPatch) -> EikonalField:
    """Multi-source shortest-path distance from the patch vertices."""
    d = dijkstra(M.adjacency(), directed=False, indices=patch.vertex_ids, min_only=True)
    return EikonalField(patch.id, np.asarray(d, float))


def diameter(M: DiscreteManifold, chunk: int = 512) -> float:
    if "diam" not in M._cache:
        adj = M.adjacency()
        best = 0.0
        for start in range(0, M.n_vertices, chunk):
            rows = np.arange(start, min(start + chunk, M.n_vertices))
            best = max(best, float(dijkstra(adj, directed=False, indices=rows).max()))
        M._cache["diam"] = best
    return M._cache["diam"]


def neighborhood(tau: np.ndarray, s: float) -> np.ndarray:
    """Indicator of the open metric neighborhood {tau < s}."""
    return (tau < s).astype(np.int8)


def cutoff_family(M: DiscreteManifold, patch: BoundaryPatch, s_grid: Sequence[float],
                  tau: np.ndarray | None = None) -> CutoffFamily:
    s = np.asarray(s_grid, float)
    if s.ndim != 1 or len(s) == 0 or np.any(np.diff(s) <= 0):
        raise GeometryError("s_grid must be strictly increasing")
    if s[0] < 0:
        raise GeometryError("s_grid must start at a nonnegative value")
    if tau is None:
        tau = eikonal(M, patch).values
    ind = (tau[None, :] < s[:, None]).astype(np.int8)
    return CutoffFamily(patch.id, s, ind)


# ---------------------------------------------------------------- continuum references
# The grid-graph metric is anisotropic (it is the l1 metric on a flat square).
# The references below approximate the Riemannian distances themselves and are
# used only to score reconstructions.

_WIDE_OFFSETS = ((1, 0), (0, 1), (1, 1), (1, -1), (2, 1), (1, 2), (2, -1), (1, -2))


def _is_flat(M: DiscreteManifold) -> float | None:
    """The constant factor if the metric is a constant multiple of the Euclidean one."""
    if M.factor is None:
        return 1.0
    probe = np.asarray(M.factor(*M.coords.T), float)
    if M.kind == "interval":
        probe = np.asarray(M.factor(M.coords[:, 0]), float)
    return float(probe[0]) if np.allclose(probe, probe[0], rtol=1e-13, atol=0) else None


def _wide_graph(M: DiscreteManifold) -> csr_matrix:
    if "wide" in M._cache:
        return M._cache["wide"]
    if M.dim != 2:
        raise GeometryError("wide-stencil reference is implemented for rectangles")
    nx, ny = M.shape
    hx, hy = M.extent[0] / (nx - 1), M.extent[1] / (ny - 1)
    idx = np.arange(nx * ny).reshape(ny, nx)
    rows, cols, vals = [], [], []
    for di, dj in _WIDE_OFFSETS:
        i0, i1 = max(0, -di), nx - max(0, di)
        j0, j1 = max(0, -dj), ny - max(0, dj)
        a = idx[j0:j1, i0:i1].ravel()
        b = idx[j0 + dj:j1 + dj, i0 + di:i1 + di].ravel()
        pa, pb = M.coords[a], M.coords[b]
        seg = np.hypot(di * hx, dj * hy)
        nodes, wts = np.polynomial.legendre.leggauss(6)
        t = 0.5 * (nodes + 1.0)
        acc = np.zeros(len(a))
        for tk, wk in zip(t, wts):
            q = pa + tk * (pb - pa)
            acc += 0.5 * wk * np.asarray(M.factor(q[:, 0], q[:, 1]), float)
        rows.append(a)
        cols.append(b)
        vals.append(acc * seg)
    G = csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                   shape=(M.n_vertices,) * 2)
    M._cache["wide"] = G
    return G


def reference_distances(M: DiscreteManifold, rows: np.ndarray | None = None) -> np.ndarray:
    """Approximate Riemannian distances from ``rows`` (default all vertices) to all vertices.

    Exact for intervals and for flat boxes (straight segments); for a
    conformal rectangle, shortest paths over a 16-direction stencil whose
    segment lengths integrate the factor, which leaves a small angular bias.
    """
    rows = np.arange(M.n_vertices) if rows is None else np.asarray(rows, int)
    c = _is_flat(M)
    if M.kind == "interval" or c is None and M.dim == 1:
        return dijkstra(M.adjacency(), directed=False, indices=rows)
    if c is not None:
        diff = M.coords[rows][:, None, :] - M.coords[None, :, :]
        return c * np.sqrt(np.sum(diff * diff, axis=2))
    return dijkstra(_wide_graph(M), directed=False, indices=rows)


def reference_eikonal(M: DiscreteManifold, patch: BoundaryPatch) -> np.ndarray:
    """Approximate Riemannian distance to a patch (see ``reference_distances``).

    For flat boxes the patch is treated as the axis-aligned box spanned by its
    vertices, i.e. the full segment or face rather than its grid points.
    """
    c = _is_flat(M)
    if M.kind == "interval":
        return eikonal(M, patch).values
    if c is not None:
        P = M.coords[patch.vertex_ids]
        lo, hi = P.min(axis=0), P.max(axis=0)
        d = M.coords - np.clip(M.coords, lo, hi)
        return c * np.sqrt(np.sum(d * d, axis=1))
    d = dijkstra(_wide_graph(M), directed=False, indices=patch.vertex_ids, min_only=True)
    return np.asarray(d, float)
