"""Pure-Python implementations of the hot kernels.

Signatures mirror ``bcml._kernels`` exactly; ``bcml.kernels`` picks one at import.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.sparse import csr_matrix


def leapfrog(indptr, indices, data, dt2, bidx, bvals, probe_indptr, probe_indices, probe_data, out):
    """Explicit leapfrog for u'' = L u with Dirichlet rows given by ``bvals``.

    ``bvals`` has shape (n_steps + 1, n_b, R); ``out`` (n_steps + 1, P, R) receives
    ``probe @ u`` at every step.  Zero Cauchy data.  Returns the final state (V, R).
    """
    n_steps = bvals.shape[0] - 1
    V = len(indptr) - 1
    R = bvals.shape[2]
    L = csr_matrix((data, indices, indptr), shape=(V, V))
    probe = csr_matrix((probe_data, probe_indices, probe_indptr), shape=(out.shape[1], V))
    prev = np.zeros((V, R))
    cur = np.zeros((V, R))
    cur[bidx] = bvals[0]
    out[0] = probe @ cur
    # u^1 = u^0 + dt^2/2 L u^0 keeps u_t(0) = 0 to second order
    nxt = cur + 0.5 * dt2 * (L @ cur)
    nxt[bidx] = bvals[1] if n_steps >= 1 else 0.0
    if n_steps >= 1:
        prev, cur = cur, nxt
        out[1] = probe @ cur
    for n in range(1, n_steps):
        nxt = 2.0 * cur - prev + dt2 * (L @ cur)
        nxt[bidx] = bvals[n + 1]
        prev, cur = cur, nxt
        out[n + 1] = probe @ cur
    return cur


def jacobi_sweep(A, Vt, threshold):
    """One Cardoso-Souloumiac sweep over all index pairs, in place.

    ``A`` is (n, n, K): K symmetric matrices interleaved entrywise, rotated as
    A_k <- G^T A_k G.  ``Vt`` (n, m) accumulates the transposed rotation.
    Pairs are visited in round-robin order; the n/2 disjoint pairs of a round
    are rotated together.  Returns the largest |sin| applied.
    """
    n = A.shape[0]
    players = n + (n % 2)
    ring = list(range(players))
    smax = 0.0
    for _ in range(players - 1):
        pairs = []
        for j in range(players // 2):
            p, q = sorted((ring[j], ring[players - 1 - j]))
            if q < n:
                pairs.append((p, q))
        if pairs:
            P = np.array([pq[0] for pq in pairs])
            Q = np.array([pq[1] for pq in pairs])
            g1 = A[P, P] - A[Q, Q]
            g2 = A[P, Q] + A[Q, P]
            ton = np.sum(g1 * g1 - g2 * g2, axis=1)
            toff = 2.0 * np.sum(g1 * g2, axis=1)
            theta = 0.5 * np.arctan2(toff, ton + np.sqrt(ton * ton + toff * toff))
            s = np.sin(theta)
            keep = np.abs(s) > threshold
            if keep.any():
                P, Q, s, c = P[keep], Q[keep], s[keep], np.cos(theta[keep])
                smax = max(smax, float(np.abs(s).max()))
                cr, sr = c[:, None, None], s[:, None, None]
                rp, rq = A[P].copy(), A[Q]
                A[P] = cr * rp + sr * rq
                A[Q] = cr * rq - sr * rp
                vp, vq = Vt[P].copy(), Vt[Q]
                Vt[P] = c[:, None] * vp + s[:, None] * vq
                Vt[Q] = c[:, None] * vq - s[:, None] * vp
                cc, ss = c[None, :, None], s[None, :, None]
                cp, cq = A[:, P].copy(), A[:, Q]
                A[:, P] = cc * cp + ss * cq
                A[:, Q] = cc * cq - ss * cp
        ring = [ring[0], ring[-1]] + ring[1:-1]
    return smax
