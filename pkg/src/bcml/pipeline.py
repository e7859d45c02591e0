"""Scalar reconstruction pipeline: forward synthesis, reconstruction from boundary data, scoring.

``synthesize`` is the only place that touches a manifold to produce data.
``reconstruct`` receives a :class:`BoundaryData` (response kernel, boundary
measure, time grid and patch catalog as sets of boundary vertex ids) and
never sees interior geometry.  ``evaluate`` compares a reconstruction with
ground truth.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import algebra, bcm, geometry, metric, wave


class PipelineError(RuntimeError):
    def __init__(self, stage: str, msg: str):
        super().__init__(f"[{stage}] {msg}")
        self.stage = stage


@dataclass(frozen=True)
class ForwardParams:
    T: float
    cfl_safety: float = 0.5
    stride: int = 1
    snap: str = "dt"
    dt: float | None = None


@dataclass(frozen=True)
class ReconParams:
    tol_psd: float = 1e-8
    tol_rank: float = 1e-6
    tol_offdiag: float = 1e-10
    max_sweeps: int = 100
    s_step: float | None = None  # default: dt / 4
    cluster_eps: float | None = None  # default: 2 s_step
    boundary_eps: float | None = None  # default: s_step
    cond_cap: float = 50.0
    quadrature: str = "leapfrog"
    rule: str = "upper"
    jd_stall: float = 1e-3


@dataclass(frozen=True)
class BoundaryData:
    """Everything the inverse side is allowed to know."""

    response: wave.ResponseOperator
    T: float
    dt: float
    n_steps: int
    stride: int
    boundary_ids: np.ndarray
    boundary_weights: np.ndarray
    patches: dict  # patch id -> boundary vertex ids
    dim: int

    def control_space(self) -> wave.ControlSpace:
        return wave.ControlSpace(self.boundary_ids, self.boundary_weights, self.dt, self.n_steps, self.stride)

    def meta(self) -> dict:
        return {
            "T": self.T, "dt": self.dt, "n_steps": self.n_steps, "stride": self.stride, "dim": self.dim,
            "boundary_ids": [int(b) for b in self.boundary_ids],
            "boundary_weights": [float(w) for w in self.boundary_weights],
            "patches": {k: [int(v) for v in ids] for k, ids in self.patches.items()},
            "response_form": self.response.form,
            "response_shape": list(self.response.matrix.shape),
        }

    def response_blob_matrix(self) -> np.ndarray:
        """The response as a 2D array: the kernel (b_out, lag, b_in) flattened to rows (b_out, lag)."""
        m = self.response.matrix
        return m.reshape(-1, m.shape[-1]) if m.ndim == 3 else m

    @classmethod
    def from_parts(cls, matrix: np.ndarray, meta: dict) -> "BoundaryData":
        shape = tuple(meta["response_shape"])
        R = wave.ResponseOperator(np.asarray(matrix, float).reshape(shape), meta["response_form"],
                                  float(meta["dt"]), 2 * int(meta["n_steps"]),
                                  np.asarray(meta["boundary_ids"], int),
                                  np.asarray(meta["boundary_weights"], float))
        return cls(R, float(meta["T"]), float(meta["dt"]), int(meta["n_steps"]), int(meta["stride"]),
                   np.asarray(meta["boundary_ids"], int), np.asarray(meta["boundary_weights"], float),
                   {k: np.asarray(v, int) for k, v in meta["patches"].items()}, int(meta["dim"]))


def synthesize(M: geometry.DiscreteManifold, fp: ForwardParams, form: str = "kernel") -> BoundaryData:
    """Response on [0, 2T] for the manifold's boundary, plus the metadata the inverse side needs."""
    diam = geometry.diameter(M)
    if fp.T <= diam:
        raise PipelineError("forward", f"T = {fp.T} must exceed the diameter {diam:.6g}")
    cs = wave.control_space(M, fp.T, fp.dt, fp.cfl_safety, fp.stride, fp.snap)
    R = wave.response_matrix(M, cs.dt, 2 * cs.n_steps, fp.cfl_safety, form)
    patches = {p.id: p.vertex_ids for p in geometry.patch_catalog(M)}
    return BoundaryData(R, cs.T, cs.dt, cs.n_steps, cs.stride, cs.boundary_ids, cs.boundary_weights,
                        patches, M.dim)


@dataclass
class Reconstruction:
    params: ReconParams
    s_grid: np.ndarray
    connecting: bcm.ConnectingResult
    model: bcm.ModelSpace
    families: dict  # patch id -> NestedFamily
    eikonals: dict  # patch id -> operator eikonal on the model space
    commutation: float  # max pairwise commutation defect
    jd: algebra.JointDiagResult
    cloud: algebra.SpectrumCloud
    boundary_flags: np.ndarray
    field: metric.MetricTensorField
    copy: metric.CopyManifold
    patch_ids: list
    timings: dict = field(default_factory=dict)


def resolved(params: ReconParams, dt: float) -> ReconParams:
    ds = params.s_step if params.s_step is not None else 0.25 * dt
    return replace(params, s_step=ds,
                   cluster_eps=params.cluster_eps if params.cluster_eps is not None else 2 * ds,
                   boundary_eps=params.boundary_eps if params.boundary_eps is not None else ds)


def reconstruct(data: BoundaryData, params: ReconParams = ReconParams(), log=None) -> Reconstruction:
    """Response -> connecting operator -> model space -> eikonals -> spectrum cloud -> copy."""
    p = resolved(params, data.dt)
    cs = data.control_space()
    timings = {}

    def stage(name, fn):
        t0 = time.perf_counter()
        try:
            out = fn()
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise PipelineError(name, str(exc)) from exc
        timings[name] = time.perf_counter() - t0
        if log:
            log(f"{name}: {timings[name]:.2f}s")
        return out

    con = stage("connecting", lambda: bcm.connecting_from_response(data.response, cs, p.quadrature))
    ms = stage("model", lambda: bcm.sqrt_psd(con.matrix, cs.gram, p.tol_psd))
    s_grid = np.arange(0.0, cs.T + 0.5 * p.s_step, p.s_step)
    ids = list(data.patches)

    def families():
        out = {}
        for pid in ids:
            sel = wave.select(cs, geometry.BoundaryPatch(pid, data.patches[pid]), np.inf)
            out[pid] = bcm.model_projection_family(ms, cs, sel, s_grid, p.tol_rank)
        return out

    fams = stage("families", families)
    eiks = stage("eikonals", lambda: {pid: fams[pid].eikonal(p.rule) for pid in ids})
    mats = [eiks[pid] for pid in ids]
    comm = stage("commutation", lambda: max(
        (algebra.commutation_defect(mats[i], mats[j])
         for i in range(len(mats)) for j in range(i + 1, len(mats))), default=0.0))
    jd = stage("joint_diag", lambda: algebra.joint_diagonalize(
        mats, p.max_sweeps, p.tol_offdiag, stall=p.jd_stall))
    cloud = stage("cloud", lambda: algebra.spectrum_cloud(jd.tuples, p.cluster_eps))
    flags = cloud.points.min(axis=1) <= p.boundary_eps * (1 + 1e-9) if len(cloud.points) else np.zeros(0, bool)
    fld = stage("metric", lambda: metric.metric_field(cloud, data.dim, cond_cap=p.cond_cap))
    cp = stage("copy", lambda: metric.assemble_copy(cloud, fld, p.boundary_eps))
    return Reconstruction(p, s_grid, con, ms, fams, eiks, comm, jd, cloud, flags, fld, cp, ids, timings)


# ---------------------------------------------------------------- ground-truth scoring

@dataclass(frozen=True)
class Evaluation:
    match: np.ndarray  # source vertex per cloud point
    distances: metric.DistanceComparison
    diameter_ratio: float  # copy diameter / reference diameter over accepted points
    graph_diameter_ratio: float  # copy diameter / graph diameter of the source
    interior: np.ndarray  # cloud points whose matched vertex is interior and at least 2h from the boundary
    unit_diagonal: np.ndarray  # max_i |g^{ii} - 1| per accepted point (chart's own patches)
    conformal: np.ndarray  # recovered conformal factor per point (NaN if unavailable)
    conformal_true: np.ndarray
    tuple_error: float  # max over points of sup-norm distance to the matched true tuple


def evaluate(M: geometry.DiscreteManifold, rec: Reconstruction, margin: float = 2.0) -> Evaluation:
    catalog = {q.id: q for q in geometry.patch_catalog(M)}
    true_tuples = np.column_stack([geometry.reference_eikonal(M, catalog[pid]) for pid in rec.patch_ids])
    interior_v = ~M.is_boundary
    cand = np.flatnonzero(interior_v)
    m_local = metric.match_points(rec.cloud.points, true_tuples[cand])
    match = cand[m_local]
    D_true = geometry.reference_distances(M, match)[:, match]
    cmp = metric.compare_distances(rec.copy, D_true)
    ok = np.flatnonzero(rec.field.accepted)
    Dc = rec.copy.distances[np.ix_(ok, ok)]
    diam_copy = float(Dc[np.isfinite(Dc)].max()) if len(ok) else 0.0
    diam_ref = float(D_true[np.ix_(ok, ok)].max()) if len(ok) else 0.0
    diam_graph = geometry.diameter(M)
    # distance to the boundary in the reference metric
    dist_b = np.min(true_tuples[match], axis=1)
    interior = dist_b >= margin * M.h
    unit = np.full(len(match), np.nan)
    for a in ok:
        unit[a] = float(np.max(np.abs(np.diag(rec.field.inverse[a]) - 1.0)))
    conf = metric.conformal_factor(rec.copy, M.coords[match]) if M.dim > 1 else np.full(len(match), np.nan)
    if M.factor is not None and M.dim > 1:
        conf_true = np.asarray(M.factor(*M.coords[match].T), float)
    else:
        conf_true = np.ones(len(match))
    terr = float(np.max(np.abs(rec.cloud.points - true_tuples[match]))) if len(match) else 0.0
    return Evaluation(match, cmp, diam_copy / diam_ref if diam_ref else np.nan,
                      diam_copy / diam_graph if diam_graph else np.nan,
                      interior, unit, conf, conf_true, terr)


# ---------------------------------------------------------------- truth-side checks of the data pipeline

def oracle_comparison(M: geometry.DiscreteManifold, data: BoundaryData, fp: ForwardParams,
                      quadrature: str = "leapfrog") -> dict:
    """Connecting operator from the response vs the Gram matrix of final states (spectral norms)."""
    cs = data.control_space()
    t0 = time.perf_counter()
    C_formula = bcm.connecting_from_response(data.response, cs, quadrature)
    t_formula = time.perf_counter() - t0
    C_gram = wave.gram_connecting_oracle(M, cs, fp.cfl_safety)
    err = np.linalg.norm(C_formula.matrix - C_gram, 2) / np.linalg.norm(C_gram, 2)
    return {"relative_error": float(err), "asymmetry": C_formula.asymmetry, "seconds": t_formula,
            "formula": C_formula, "gram": C_gram}


def projection_identity(M: geometry.DiscreteManifold, data: BoundaryData, fp: ForwardParams,
                        rec: Reconstruction, patch: str, s_values, coeffs: np.ndarray | None = None) -> dict:
    """Push model projections back with the true control map and compare with exact cutoffs.

    The snapshot is u^f(T) for the control with coefficients ``coeffs``
    (default: a smooth profile in time, equal on every boundary vertex).
    """
    cs = data.control_space()
    if coeffs is None:
        t = cs.T - cs.action_times  # center times of the time hats
        prof = np.sin(np.pi * t / cs.T) ** 2 * (1.0 + 0.5 * np.cos(3.0 * t))
        coeffs = np.tile(prof, cs.n_boundary)
    W = wave.control_map(M, cs, fp.cfl_safety, weighted=True)
    U = bcm.pushforward_map(rec.model, W)
    u_true = wave.control_map(M, cs, fp.cfl_safety) @ coeffs
    sel = wave.select(cs, geometry.BoundaryPatch(patch, data.patches[patch]), np.inf)
    tau = geometry.eikonal(M, geometry.BoundaryPatch(patch, data.patches[patch])).values
    interior = ~M.is_boundary
    errs = bcm.pushforward_check(rec.model, cs, sel, U, coeffs, u_true, tau, M.vertex_weights * interior,
                                 s_values, rec.params.tol_rank)
    iso = float(np.linalg.norm(U.T @ U - np.eye(U.shape[1]), 2))
    return {"errors": errs, "isometry_defect": iso}
