import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bcml import geometry as g
from bcml import wave


def patch(M, pid):
    return next(p for p in g.patch_catalog(M) if p.id == pid)


def pulse(n_steps, nb, b, k0, width=3):
    """Smooth bump on boundary vertex b starting at node k0."""
    f = np.zeros((n_steps + 1, nb))
    k = np.arange(width + 1)
    f[k0:k0 + width + 1, b] = np.sin(np.pi * k / width) ** 2
    return f


def test_zero_control_gives_zero_wave():
    M = g.rect2d(6, 5)
    dt = wave.stability_bound(M)
    tr = wave.solve_wave(M, np.zeros((30, len(M.boundary_ids))), dt)
    assert not tr.snapshots.any()


def test_dt_violation_reports_bound():
    M = g.interval(11)
    with pytest.raises(wave.WaveError, match="stability bound"):
        wave.solve_wave(M, np.zeros((5, 2)), dt=1.0)
    with pytest.raises(wave.WaveError):
        wave.control_space(M, 1.0, dt=0.2)


def test_controls_must_vanish_at_first_nodes():
    M = g.interval(11)
    f = np.zeros((10, 2))
    f[1, 0] = 1.0
    with pytest.raises(wave.WaveError):
        wave.solve_wave(M, f, wave.stability_bound(M))


def _mass_front(M, u, thr=1e-3):
    """Smallest x beyond which the volume mass of u is below thr of the total."""
    m = M.vertex_weights * u * u
    tail = np.cumsum(m[::-1])[::-1]
    return M.coords[np.flatnonzero(tail >= thr * m.sum()), 0].max()


@pytest.mark.parametrize("width", [3, 8])
def test_front_tracking_interval_exact_step(width):
    # dt = h: the lattice solution is d'Alembert's u(x, t) = f(t - x) sampled at the nodes
    M = g.interval(81)
    dt = wave.stability_bound(M, 1.0)
    n = int(round(0.8 / dt))
    f = pulse(n, 2, 0, 2, width)
    tr = wave.solve_wave(M, f, dt, 1.0)
    x = M.coords[:, 0]
    t = np.arange(n + 1) * dt
    for k in range(7, n + 1, 7):
        u = tr.snapshots[k]
        front = x[np.flatnonzero(np.abs(u) > 1e-8 * np.abs(u).max())].max()
        exact = np.interp(k * dt - x, t, f[:, 0], left=0, right=0)
        exact_front = x[np.flatnonzero(np.abs(exact) > 1e-8 * np.abs(exact).max())].max()
        assert abs(front - exact_front) <= 2 * M.h
        np.testing.assert_allclose(u, exact, atol=1e-12)


def test_front_tracking_interval_half_step():
    # dt = h / 2 is dispersive; measured lag of the mass front after 64 cells is 3 h
    M = g.interval(81)
    dt = wave.stability_bound(M, 0.5)
    n = int(round(0.8 / dt))
    f = pulse(n, 2, 0, 2, 8)
    tr = wave.solve_wave(M, f, dt, 0.5)
    x = M.coords[:, 0]
    t = np.arange(n + 1) * dt
    worst = 0.0
    for k in range(9, n + 1, 7):
        exact = np.interp(k * dt - x, t, f[:, 0], left=0, right=0)
        worst = max(worst, abs(_mass_front(M, tr.snapshots[k]) - _mass_front(M, exact)))
        if k * dt <= 0.3:
            assert worst <= 2 * M.h + 1e-12
    assert worst <= 3 * M.h + 1e-12


@given(st.integers(0, 2 ** 31 - 1))
def test_solve_is_linear(seed):
    rng = np.random.default_rng(seed)
    M = g.rect2d(5, 4, "1 + 0.2*x*y", 1.0, 1.0)
    nb = len(M.boundary_ids)
    dt = wave.stability_bound(M)
    f, h = rng.standard_normal((2, 25, nb))
    f[:2] = h[:2] = 0
    a = rng.standard_normal()
    lhs = wave.solve_wave(M, f + a * h, dt).snapshots
    rhs = wave.solve_wave(M, f, dt).snapshots + a * wave.solve_wave(M, h, dt).snapshots
    np.testing.assert_allclose(lhs, rhs, atol=1e-11 * max(1.0, np.abs(lhs).max()))


def test_boundary_values_equal_control_and_zero_start():
    M = g.rect2d(5, 5)
    nb = len(M.boundary_ids)
    rng = np.random.default_rng(3)
    f = rng.standard_normal((15, nb))
    f[:2] = 0
    tr = wave.solve_wave(M, f, wave.stability_bound(M))
    np.testing.assert_array_equal(tr.snapshots[:, M.boundary_ids], f)
    assert not tr.snapshots[0].any()
    assert not tr.snapshots[1].any()  # zero Cauchy data and zero control so far


def test_time_shift_covariance():
    M = g.rect2d(6, 5, "1 + 0.1*y", 1.0, 1.0)
    nb = len(M.boundary_ids)
    dt = wave.stability_bound(M)
    f = pulse(40, nb, 3, 2)
    k = 7
    fs = np.zeros_like(f)
    fs[k:] = f[:-k]
    a = wave.solve_wave(M, f, dt).snapshots
    b = wave.solve_wave(M, fs, dt).snapshots
    np.testing.assert_array_equal(b[k:], a[:-k])
    assert not b[:k].any()


def test_energy_conserved_after_switch_off():
    M = g.rect2d(8, 7, "1 + 0.3*sin(pi*x)*sin(pi*y)", 1.0, 1.0)
    nb = len(M.boundary_ids)
    dt = wave.stability_bound(M)
    n = 1100
    f = pulse(n, nb, 5, 2, width=6)
    u = wave.solve_wave(M, f, dt).snapshots
    E = [wave.discrete_energy(M, u[k - 1], u[k], dt) for k in range(20, n + 1)]
    assert E[0] > 0
    assert (max(E) - min(E)) / E[0] < 1e-6


# ---------------------------------------------------------------- control space and control map

def test_control_space_basis_vanishes_early_and_weights_positive():
    M = g.rect2d(5, 5)
    for stride in (1, 2, 3):
        cs = wave.control_space(M, 6.0, stride=stride)
        assert not cs.time_basis[: wave.FIRST_NODE].any()
        assert np.all(cs.time_weights > 0) and np.all(cs.boundary_weights > 0)
        np.testing.assert_allclose(cs.gram, cs.gram.T)
        assert np.linalg.eigvalsh(cs.gram).min() > 0


def test_control_space_snap_modes():
    M = g.interval(11)
    a = wave.control_space(M, 1.05, cfl_safety=1.0, snap="dt")
    assert a.T == pytest.approx(1.05)
    b = wave.control_space(M, 1.05, cfl_safety=1.0, snap="T")
    assert b.dt == pytest.approx(0.1) and b.T == pytest.approx(1.1)
    with pytest.raises(wave.WaveError):
        wave.control_space(M, 1.0, snap="nearest")


def test_control_map_zero_and_gram_psd():
    M = g.rect2d(5, 5, "1 + 0.2*x", 1.0, 1.0)
    cs = wave.control_space(M, 1.5)
    W = wave.control_map(M, cs, weighted=True)
    assert not (W @ np.zeros(cs.size)).any()
    G = W.T @ W
    np.testing.assert_allclose(G, G.T, atol=1e-14)
    assert np.linalg.eigvalsh(G).min() >= -1e-12 * np.linalg.norm(G, 2)


@pytest.mark.parametrize("pid,s", [("x0", 0.3), ("y1a", 0.5), ("x1", 0.8)])
def test_delayed_control_support_and_influence(pid, s):
    M = g.rect2d(11, 11, "1 + 0.3*sin(pi*x)*sin(pi*y)", 1.0, 1.0)
    cs = wave.control_space(M, 1.2)
    p = patch(M, pid)
    sel = wave.select(cs, p, s)
    assert len(sel.indices)
    W = wave.control_map(M, cs)[:, sel.indices]
    tau = g.eikonal(M, p).values
    outside = tau >= s + 2 * M.h
    w = M.vertex_weights
    # every column is supported in the neighborhood up to two cells (in the volume norm)
    mass = (w[:, None] * W * W).sum(axis=0)
    live = mass > 0
    assert np.all((w[outside, None] * W[outside] ** 2).sum(axis=0)[live] < 1e-3 * mass[live])
    # finite domain of influence for a combined control, in the volume norm
    u = W @ np.random.default_rng(0).standard_normal(len(sel.indices))
    assert np.sum(w[outside] * u[outside] ** 2) < 1e-3 * np.sum(w * u ** 2)


def test_select_respects_patch_and_delay():
    M = g.rect2d(6, 6)
    cs = wave.control_space(M, 4.0)
    p = patch(M, "y0")
    sel = wave.select(cs, p, 1.0)
    b, i = np.divmod(sel.indices, cs.n_time)
    assert set(cs.boundary_ids[b]) <= set(p.vertex_ids)
    assert np.all(cs.action_times[i] < 1.0)
    # every selected basis control is zero before T - s
    nodal = cs.time_basis[:, i]
    t = np.arange(cs.n_steps + 1) * cs.dt
    assert not nodal[t < cs.T - 1.0 - 1e-12].any()
    assert len(wave.select(cs, p, 0.0).indices) == 0


# ---------------------------------------------------------------- response

def test_response_zero_and_doubling():
    M = g.rect2d(5, 4)
    dt = wave.stability_bound(M)
    R = wave.response_matrix(M, dt, 20)
    nb = len(M.boundary_ids)
    assert not R.apply(np.zeros((21, nb))).any()
    f = pulse(20, nb, 2, 2)
    np.testing.assert_allclose(R.apply(2 * f), 2 * R.apply(f), rtol=1e-14)


def test_response_kernel_and_dense_agree():
    M = g.rect2d(5, 4, "1 + 0.2*y", 1.0, 1.0)
    dt = wave.stability_bound(M)
    D = wave.response_matrix(M, dt, 16, form="dense")
    K = wave.response_matrix(M, dt, 16, form="kernel")
    np.testing.assert_allclose(K.dense(), D.matrix, atol=1e-13)
    np.testing.assert_allclose(D.kernel(), K.kernel(), atol=1e-13)


def test_response_matches_trajectory_trace():
    M = g.interval(21, 1.0, "1 + 0.5*x")
    dt = wave.stability_bound(M)
    n = 40
    f = pulse(n, 2, 0, 3)
    R = wave.response_matrix(M, dt, n, form="kernel")
    u = wave.solve_wave(M, f, dt).snapshots
    trace = (wave.neumann_trace(M) @ u.T).T
    np.testing.assert_allclose(R.apply(f), trace, atol=1e-12)


def test_response_silent_at_far_end_before_arrival():
    M = g.interval(65)
    dt = wave.stability_bound(M, 1.0)
    n = int(round(1.8 / dt))
    f = pulse(n, 2, 0, 2)
    R = wave.response_matrix(M, dt, n, 1.0)
    out = R.apply(f)
    t = np.arange(n + 1) * dt
    t0 = 2 * dt
    assert np.abs(out[t < t0 + 1.0 - M.h, 1]).max() == 0.0
    assert np.abs(out[:, 1]).max() > 0.1


def test_neumann_trace_is_one_sided_difference():
    M = g.interval(11)
    u = M.coords[:, 0] ** 2
    d = wave.neumann_trace(M) @ u
    h = M.h
    # outward derivative at 0 is -u'(0); at 1 it is u'(1): one-sided quotients
    assert d[0] == pytest.approx((u[0] - u[1]) / h)
    assert d[1] == pytest.approx((u[-1] - u[-2]) / h)


# ---------------------------------------------------------------- Gram oracle

def test_gram_oracle_properties():
    M = g.rect2d(6, 5, "1 + 0.2*x*y", 1.0, 1.0)
    cs = wave.control_space(M, 1.5, stride=2)
    C = wave.gram_connecting_oracle(M, cs)
    nrm = np.linalg.norm(C, 2)
    assert np.abs(C - C.T).max() <= 1e-10 * nrm
    assert np.all(np.diag(C) >= 0)
    assert np.linalg.eigvalsh(C).min() >= -1e-10 * nrm
    W = wave.control_map(M, cs, weighted=True)
    np.testing.assert_allclose(np.diag(C), np.sum(W * W, axis=0), rtol=1e-12)
