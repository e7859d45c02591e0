"""Acceptance checks: one row per criterion part, each with a measured value, threshold and verdict.

The heavy experiments are cached per process so the test suite and the
``verify`` subcommand share them.
"""
from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import algebra, geometry, io, pipeline, solenoidal, wave


@dataclass(frozen=True)
class Row:
    criterion: int
    name: str
    measured: float
    threshold: str
    passed: bool

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"[{verdict}] {self.criterion}. {self.name}: measured {self.measured:.6g} (need {self.threshold})"

    def as_dict(self) -> dict:
        return {"criterion": self.criterion, "name": self.name, "measured": self.measured,
                "threshold": self.threshold, "passed": self.passed}


# ---------------------------------------------------------------- reference experiments

ONE_D = dict(kind="interval", n=64, length=1.0)
FLAT_2D = dict(kind="rect2d", nx=24, ny=24, lx=1.0, ly=1.0, factor="1")
CONFORMAL_2D = dict(kind="rect2d", nx=24, ny=24, lx=1.0, ly=1.0, factor="1 + 0.3*sin(pi*x)*sin(pi*y)")
# dt equal to the edge length with T rounded up to a whole number of steps: exact 1D propagation
ONE_D_FORWARD = dict(T_factor=1.2, cfl_safety=1.0, snap="T")
TWO_D_FORWARD = dict(T_factor=1.2, cfl_safety=0.5, stride=2)


@dataclass
class ScalarRun:
    manifold: geometry.DiscreteManifold
    forward: pipeline.ForwardParams
    data: pipeline.BoundaryData
    rec: pipeline.Reconstruction
    ev: pipeline.Evaluation
    seconds: float  # blob load + reconstruction
    blob_sha: str


def scalar_run(spec: dict, fw: dict, params: pipeline.ReconParams = pipeline.ReconParams(),
               workdir: str | None = None) -> ScalarRun:
    """Synthesize, persist the response blob, then reconstruct from the blob and metadata alone."""
    M = geometry.build_manifold(spec)
    fw = dict(fw)
    T = fw.pop("T", None) or fw.pop("T_factor") * geometry.diameter(M)
    fw.pop("T_factor", None)
    fp = pipeline.ForwardParams(T=T, **fw)
    data = pipeline.synthesize(M, fp)
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        path = Path(tmp) / "response.blob"
        sha = io.save(path, data.response_blob_matrix())
        io.write_json(Path(tmp) / "response.json", data.meta())
        t0 = time.perf_counter()
        loaded = pipeline.BoundaryData.from_parts(io.load(path), io.read_json(Path(tmp) / "response.json"))
        rec = pipeline.reconstruct(loaded, params)
        secs = time.perf_counter() - t0
    return ScalarRun(M, fp, loaded, rec, pipeline.evaluate(M, rec), secs, sha)


@lru_cache(maxsize=None)
def one_d() -> ScalarRun:
    return scalar_run(ONE_D, ONE_D_FORWARD)


@lru_cache(maxsize=None)
def flat_2d() -> ScalarRun:
    return scalar_run(FLAT_2D, TWO_D_FORWARD)


@lru_cache(maxsize=None)
def conformal_2d() -> ScalarRun:
    return scalar_run(CONFORMAL_2D, TWO_D_FORWARD)


@lru_cache(maxsize=None)
def box_series(sizes: tuple[int, ...] = (8, 12, 16)) -> tuple:
    return tuple(solenoidal.run_box(n) for n in sizes)


# ---------------------------------------------------------------- criteria

def criterion_1() -> list[Row]:
    r = one_d()
    t0 = time.perf_counter()
    oc = pipeline.oracle_comparison(r.manifold, r.data, r.forward)
    secs = time.perf_counter() - t0
    return [Row(1, "connecting operator from response vs Gram oracle, interval(64)", oc["relative_error"],
                "< 5e-2 (relative spectral norm)", oc["relative_error"] < 5e-2),
            Row(1, "oracle comparison runtime [s]", secs, "< 120", secs < 120)]


def criterion_2() -> list[Row]:
    r = one_d()
    pi = pipeline.projection_identity(r.manifold, r.data, r.forward, r.rec, "left", (0.3, 0.5, 0.7))
    return [Row(2, f"pushed-forward model projection vs cutoff at s={s}", e, "< 0.1", e < 0.1)
            for s, e in pi["errors"].items()]


def criterion_3() -> list[Row]:
    a, b = one_d(), flat_2d()
    h = a.manifold.h
    rows = [Row(3, "1D copy distances, sup error / grid spacing", a.ev.distances.sup_error / h, "< 3",
                a.ev.distances.sup_error < 3 * h),
            Row(3, "2D flat copy distances, relative error", b.ev.distances.relative_error, "< 0.1",
                b.ev.distances.relative_error < 0.1)]
    secs = a.seconds + b.seconds
    rows.append(Row(3, "reconstruction runtime from blobs [s]", secs, "< 900", secs < 900))
    return rows


def _interior_fraction(ok: np.ndarray, interior: np.ndarray) -> float:
    return float(np.mean(ok[interior])) if interior.any() else 0.0


def criterion_4() -> list[Row]:
    f, c = flat_2d(), conformal_2d()
    unit_ok = np.nan_to_num(f.ev.unit_diagonal, nan=np.inf) <= 0.1
    frac_unit = _interior_fraction(unit_ok, f.ev.interior)
    rel = np.abs(c.ev.conformal / c.ev.conformal_true - 1.0)
    frac_conf = _interior_fraction(np.nan_to_num(rel, nan=np.inf) <= 0.15, c.ev.interior)
    return [Row(4, "2D flat: fraction of interior anchors with |g^ii - 1| <= 0.1", frac_unit, ">= 0.9",
                frac_unit >= 0.9),
            Row(4, "2D conformal: fraction of interior anchors with factor within 15%", frac_conf, ">= 0.8",
                frac_conf >= 0.8)]


def exact_eikonal_norms(M: geometry.DiscreteManifold, ds: float) -> list[tuple[str, float, float]]:
    """(patch, ||sum s dX(s)||, max tau) for exact cutoff families on the vertex space."""
    out = []
    for p in geometry.patch_catalog(M):
        tau = geometry.eikonal(M, p).values
        s_grid = np.arange(0.0, tau.max() + 2 * ds, ds)
        fam = algebra.nested_basis(np.eye(M.n_vertices), tau, s_grid, 1e-12)
        out.append((p.id, float(np.max(np.abs(fam.entrance_values()))), float(tau.max())))
    return out


def criterion_5() -> list[Row]:
    rows = []
    for label, spec in (("interval(64)", ONE_D), ("rect2d(24x24)", FLAT_2D)):
        M = geometry.build_manifold(spec)
        ds = 0.25 * M.h
        worst = max(abs(n - t) for _, n, t in exact_eikonal_norms(M, ds))
        rows.append(Row(5, f"{label}: max over patches | ||tau op|| - max tau | / s-step", worst / ds, "<= 1",
                        worst <= ds * (1 + 1e-9)))
    r12 = [b for b in box_series() if b.n == 12][0]
    gap = abs(r12.eps_norm - r12.tau_max) / r12.tau_max
    rows.append(Row(5, "12^3 box: | ||eps|| - max tau | / max tau", gap, "< 0.05", gap < 0.05))
    return rows


def criterion_6() -> list[Row]:
    series = box_series()
    lem = [b.lemma.half_ratio for b in series]
    eff = [b.eff.half_ratio for b in series]
    sizes = "->".join(str(b.n) for b in series)
    return [Row(6, f"eps - tau tail ratio strictly decreasing {sizes}: {_fmt(lem)}", lem[-1],
                "strictly decreasing", solenoidal.strictly_decreasing(lem)),
            Row(6, f"f - Y[f] tail ratio strictly decreasing {sizes}: {_fmt(eff)}", eff[-1],
                "strictly decreasing", solenoidal.strictly_decreasing(eff))]


def criterion_7() -> list[Row]:
    series = box_series()
    rel = min(b.commutator_rel for b in series)
    tails = [b.commutator.half_ratio for b in series]
    est = [b.calkin[1] for b in series]
    sup = [b.calkin[0] for b in series]
    sizes = "->".join(str(b.n) for b in series)
    bound = all(e <= s + 1e-8 for e, s in zip(est, sup))
    return [Row(7, "adjacent-face commutator, smallest relative norm over the series", rel, "> 0.01", rel > 0.01),
            Row(7, f"commutator tail ratio strictly decreasing {sizes}: {_fmt(tails)}", tails[-1],
                "strictly decreasing", solenoidal.strictly_decreasing(tails)),
            Row(7, f"Calkin estimate <= sup|f| and increasing {sizes}: {_fmt(est)}", est[-1],
                "<= sup|f| = 1, increasing", bound and solenoidal.strictly_decreasing(est[::-1]))]


def _fmt(xs) -> str:
    return "[" + ", ".join(f"{x:.4g}" for x in xs) + "]"


def criterion_8() -> list[Row]:
    rows = []
    r = one_d()
    worst_idem = 0.0
    nested = True
    for fam in r.rec.families.values():
        prev = None
        for k in range(len(fam.s_grid)):
            P = fam.projector(k)
            worst_idem = max(worst_idem, float(np.abs(P @ P - P).max()), float(np.abs(P - P.T).max()))
            if prev is not None:
                nested &= bool(np.abs(P @ prev - prev).max() <= 1e-8)
            prev = P
    rows.append(Row(8, "model projections: max idempotence/symmetry defect", worst_idem, "<= 1e-8",
                    worst_idem <= 1e-8))
    rows.append(Row(8, "model projection families nested", float(nested), "= 1", nested))
    cc = solenoidal.build_curl_complex(8, 8, 8)
    a, b = solenoidal.exactness_defects(cc)
    rows.append(Row(8, "CURL GRAD and DIV CURL max |entry|", float(max(a, b)), "= 0 exactly", a == 0 and b == 0))
    worst_lip, separated = 0.0, True
    for spec in (ONE_D, FLAT_2D, CONFORMAL_2D):
        M = geometry.build_manifold(spec)
        taus = np.array([geometry.eikonal(M, p).values for p in geometry.patch_catalog(M)])
        i, j = M.edges[:, 0], M.edges[:, 1]
        worst_lip = max(worst_lip, float(np.max(np.abs(taus[:, i] - taus[:, j]) / M.edge_lengths)))
        separated &= len(np.unique(taus.T, axis=0)) == M.n_vertices
    rows.append(Row(8, "eikonal Lipschitz constant along edges", worst_lip, "<= 1", worst_lip <= 1 + 1e-12))
    rows.append(Row(8, "patch catalog separates all vertices", float(separated), "= 1", separated))
    again = scalar_run(ONE_D, ONE_D_FORWARD)
    same = again.blob_sha == r.blob_sha and np.array_equal(again.rec.copy.distances, r.rec.copy.distances)
    rows.append(Row(8, "identical inputs give byte-identical response blobs and copies", float(same), "= 1", same))
    return rows


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4,
            5: criterion_5, 6: criterion_6, 7: criterion_7, 8: criterion_8}


def run(selected=None, echo=print) -> list[Row]:
    rows = []
    for k in sorted(CRITERIA if selected is None else selected):
        for row in CRITERIA[k]():
            rows.append(row)
            if echo:
                echo(row.line())
    return rows
