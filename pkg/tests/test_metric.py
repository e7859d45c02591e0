import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bcml import geometry as g
from bcml import metric as mt
from bcml.algebra import SpectrumCloud


def cloud_of(tuples):
    n = len(tuples)
    return SpectrumCloud(np.asarray(tuples, float), np.ones(n), np.arange(n))


def reference_cloud(M, ids=None):
    cat = [p for p in g.patch_catalog(M) if ids is None or p.id in ids]
    return cloud_of(np.column_stack([g.reference_eikonal(M, p) for p in cat])), [p.id for p in cat]


def interior_anchors(M, margin=2):
    X = M.coords
    lo, hi = np.array(M.extent) * 0, np.array(M.extent)
    d = np.min(np.minimum(X - lo, hi - X), axis=1)
    return np.flatnonzero(d >= margin * M.h)


# ---------------------------------------------------------------- charts

def test_chart_1d_single_patch():
    M = g.interval(17)
    cloud, _ = reference_cloud(M, {"left"})
    for a in range(M.n_vertices):
        ch = mt.build_chart(cloud, a, 1)
        assert ch is not None and ch.patches == (0,)
        np.testing.assert_allclose(ch.coords[:, 0], cloud.points[ch.members, 0])


def test_chart_1d_tie_goes_to_first_patch():
    M = g.interval(17)
    cloud, _ = reference_cloud(M)
    for a in range(M.n_vertices):
        assert mt.build_chart(cloud, a, 1).patches == (0,)


def test_chart_flat_square_picks_perpendicular_sides():
    M = g.rect2d(13, 13, 1.0, 1.0, 1.0)
    cloud, ids = reference_cloud(M, {"x0", "x1", "y0", "y1"})
    for a in interior_anchors(M):
        ch = mt.build_chart(cloud, a, 2)
        names = sorted(ids[j][0] for j in ch.patches)
        assert names == ["x", "y"]
        assert abs(ch.condition - 1.0) <= 0.2


def test_chart_condition_cap_rejects():
    # all patches measure the same coordinate: no 2D chart exists
    x = np.linspace(0, 1, 30)
    cloud = cloud_of(np.column_stack([x, 1 - x, x + 0.1]))
    assert mt.build_chart(cloud, 10, 2) is None


# ---------------------------------------------------------------- gradients

@given(st.integers(0, 2 ** 31 - 1))
def test_gradients_exact_on_affine_data(seed):
    rng = np.random.default_rng(seed)
    C = rng.uniform(0, 1, (25, 2))
    A = rng.standard_normal((2, 3))
    vals = np.column_stack([C, C @ A + rng.standard_normal(3)])
    cloud = cloud_of(vals)
    ch = mt.build_chart(cloud, 0, 2, k_neighbors=12, cond_cap=1e6)
    if ch is None:
        return
    grads, res, valid = mt.estimate_gradients(ch, vals[ch.members], 0.5)
    assert valid.all()
    # chart coordinates have unit gradients, the rest the exact affine coefficients
    full = np.column_stack([np.eye(2), A])
    B = np.linalg.inv(full[:, list(ch.patches)])
    np.testing.assert_allclose(grads, (B @ full).T, atol=1e-8)
    assert np.nanmax(res) < 1e-9


def test_gradients_rank_deficient_names_anchor():
    X = np.zeros((5, 2))
    ch = mt.Chart(3, np.arange(5), (0, 1), X, 1.0)
    with pytest.raises(mt.MetricError, match="anchor 3"):
        mt.estimate_gradients(ch, X, 1.0)


def test_gradients_flat_distance_to_side_are_unit():
    M = g.rect2d(13, 13, 1.0, 1.0, 1.0)
    cloud, ids = reference_cloud(M, {"x0", "x1", "y0", "y1"})
    for a in interior_anchors(M):
        ch = mt.build_chart(cloud, a, 2)
        grads, _, valid = mt.estimate_gradients(ch, cloud.points[ch.members], 2.0 * M.h)
        assert valid.all()
        assert np.max(np.abs(np.linalg.norm(grads, axis=1) - 1.0)) <= 0.1


# ---------------------------------------------------------------- metric solve

def test_solve_metric_1d():
    for d in (1.0, -1.0):
        gm, res = mt.solve_metric(np.array([[d]]))
        assert gm[0, 0] == pytest.approx(1.0) and res == pytest.approx(0.0)


def test_solve_metric_coordinate_patches_unit_diagonal():
    rng = np.random.default_rng(2)
    ginv = np.array([[1.0, 0.3], [0.3, 1.0]])
    # rows: coordinate gradients e_1, e_2 and extra unit covectors in the metric ginv
    rows = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
    for _ in range(4):
        v = rng.standard_normal(2)
        rows.append(v / np.sqrt(v @ ginv @ v))
    gm, res = mt.solve_metric(np.array(rows))
    np.testing.assert_allclose(gm, ginv, atol=1e-12)
    np.testing.assert_allclose(np.diag(gm), 1.0, atol=1e-12)
    assert res < 1e-12


def test_solve_metric_singular_returns_none():
    assert mt.solve_metric(np.array([[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])) is None
    assert mt.solve_metric(np.array([[1.0, 0.0]])) is None


def test_non_pd_flagged_not_projected():
    # covectors of unit length for the indefinite form diag(1, -1): g comes out indefinite
    x = np.linspace(0, 1, 7)
    X, Y = np.meshgrid(x, x)
    a, b = X.ravel(), Y.ravel()
    vals = np.column_stack([a, b] + [np.sqrt(1 + t * t) * a + s * t * b for t in (1, 2, 3) for s in (1, -1)])
    fld = mt.metric_field(cloud_of(vals), 2)
    assert fld.non_pd.any()
    assert not (fld.non_pd & fld.accepted).any()
    bad = np.flatnonzero(fld.non_pd)[0]
    assert np.linalg.eigvalsh(fld.inverse[bad]).min() < 0


def test_metric_flat_square_identity():
    M = g.rect2d(13, 13, 1.0, 1.0, 1.0)
    cloud, _ = reference_cloud(M)
    fld = mt.metric_field(cloud, 2)
    I = interior_anchors(M)
    assert fld.accepted[I].all()
    np.testing.assert_allclose(fld.inverse[I], np.broadcast_to(np.eye(2), (len(I), 2, 2)), atol=0.1)


# ---------------------------------------------------------------- copies

def test_copy_1d_distances_and_boundary():
    M = g.interval(33)
    cloud, _ = reference_cloud(M)
    fld = mt.metric_field(cloud, 1)
    cp = mt.assemble_copy(cloud, fld, boundary_eps=0.25 * M.h)
    x = M.coords[:, 0]
    D = np.abs(x[:, None] - x[None])
    assert np.max(np.abs(cp.distances - D)) <= 3 * M.h
    assert cp.boundary.sum() == 2
    assert cp.n_components == 1
    # incidence: a point lies on the patches whose value vanishes there
    np.testing.assert_array_equal(cp.incidence[0], [True, False])
    np.testing.assert_array_equal(cp.incidence[-1], [False, True])


def test_copy_flat_square_diameter_and_distances():
    M = g.rect2d(13, 13, 1.0, 1.0, 1.0)
    cloud, _ = reference_cloud(M)
    fld = mt.metric_field(cloud, 2)
    cp = mt.assemble_copy(cloud, fld, boundary_eps=1e-9)
    D = g.reference_distances(M)
    ok = np.flatnonzero(fld.accepted)
    diam_copy = cp.distances[np.ix_(ok, ok)].max()
    assert abs(diam_copy / D[np.ix_(ok, ok)].max() - 1) < 0.1
    cmpd = mt.compare_distances(cp, D)
    assert cmpd.relative_error < 0.1
    # boundary labels follow the zero-set rule on every source boundary vertex
    np.testing.assert_array_equal(cp.boundary, M.is_boundary)


def test_copy_disconnected_fails():
    pts = np.array([[0.0], [0.01], [0.02], [5.0], [5.01], [5.02]])
    cloud = cloud_of(np.column_stack([pts[:, 0], 10 - pts[:, 0]]))
    fld = mt.metric_field(cloud, 1, k_neighbors=3)
    with pytest.raises(mt.MetricError, match="components"):
        mt.assemble_copy(cloud, fld, 1e-3, k_neighbors=2)
    cp = mt.assemble_copy(cloud, fld, 1e-3, k_neighbors=2, require_connected=False)
    assert cp.n_components == 2


def test_conformal_factor_recovered_from_exact_tuples():
    f = "1 + 0.3*sin(pi*x)*sin(pi*y)"
    M = g.rect2d(17, 17, f, 1.0, 1.0)
    cloud, _ = reference_cloud(M)
    fld = mt.metric_field(cloud, 2)
    cp = mt.assemble_copy(cloud, fld, boundary_eps=1e-9)
    rho = mt.conformal_factor(cp, M.coords)
    true = g.parse_field(f)(M.coords[:, 0], M.coords[:, 1])
    I = interior_anchors(M)
    rel = np.abs(rho[I] / true[I] - 1)
    assert np.mean(rel <= 0.15) >= 0.8


def test_match_points_nearest_tuple():
    true = np.array([[0.0, 1.0], [0.5, 0.5], [1.0, 0.0]])
    np.testing.assert_array_equal(mt.match_points(np.array([[0.9, 0.1], [0.1, 0.8]]), true), [2, 0])
