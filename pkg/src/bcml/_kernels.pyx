# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: leapfrog time stepping and Jacobi joint-diagonalization sweeps."""
import numpy as np
cimport numpy as cnp
from libc.math cimport atan2, cos, sin, sqrt, fabs

cnp.import_array()


def leapfrog(const int[::1] indptr, const int[::1] indices, const double[::1] data, double dt2,
             const long[::1] bidx, const double[:, :, ::1] bvals,
             const int[::1] probe_indptr, const int[::1] probe_indices, const double[::1] probe_data,
             double[:, :, ::1] out):
    cdef Py_ssize_t n_steps = bvals.shape[0] - 1
    cdef Py_ssize_t V = indptr.shape[0] - 1
    cdef Py_ssize_t R = bvals.shape[2]
    cdef Py_ssize_t P = out.shape[1]
    cdef Py_ssize_t nb = bidx.shape[0]
    cdef double[:, ::1] prev = np.zeros((V, R))
    cdef double[:, ::1] cur = np.zeros((V, R))
    cdef double[:, ::1] nxt = np.zeros((V, R))
    cdef double[:, ::1] tmp
    cdef double[::1] acc = np.zeros(R)
    cdef Py_ssize_t n, i, k, r, j, b
    cdef double a, coef

    for b in range(nb):
        for r in range(R):
            cur[bidx[b], r] = bvals[0, b, r]
    _probe(probe_indptr, probe_indices, probe_data, cur, out, 0)
    if n_steps == 0:
        return np.asarray(cur)
    for n in range(n_steps):
        coef = 0.5 * dt2 if n == 0 else dt2
        for i in range(V):
            for r in range(R):
                acc[r] = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                j = indices[k]
                a = data[k]
                for r in range(R):
                    acc[r] += a * cur[j, r]
            if n == 0:
                for r in range(R):
                    nxt[i, r] = cur[i, r] + coef * acc[r]
            else:
                for r in range(R):
                    nxt[i, r] = 2.0 * cur[i, r] - prev[i, r] + coef * acc[r]
        for b in range(nb):
            for r in range(R):
                nxt[bidx[b], r] = bvals[n + 1, b, r]
        tmp = prev
        prev = cur
        cur = nxt
        nxt = tmp
        _probe(probe_indptr, probe_indices, probe_data, cur, out, n + 1)
    return np.asarray(cur)


cdef void _probe(const int[::1] ip, const int[::1] ix, const double[::1] d,
                 double[:, ::1] u, double[:, :, ::1] out, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t P = out.shape[1]
    cdef Py_ssize_t R = out.shape[2]
    cdef Py_ssize_t p, k, r, j
    cdef double a
    for p in range(P):
        for r in range(R):
            out[n, p, r] = 0.0
        for k in range(ip[p], ip[p + 1]):
            j = ix[k]
            a = d[k]
            for r in range(R):
                out[n, p, r] += a * u[j, r]


def jacobi_sweep(double[:, :, ::1] A, double[:, ::1] Vt, double threshold):
    # A is (n, n, K) with the K matrices interleaved entrywise; Vt is the transposed
    # accumulated rotation.  Round-robin order: each round rotates n/2 disjoint pairs,
    # rows first, then columns row by row, so every pass streams through contiguous memory.
    cdef Py_ssize_t n = A.shape[0]
    cdef Py_ssize_t K = A.shape[2]
    cdef Py_ssize_t m = Vt.shape[1]
    cdef Py_ssize_t players = n + (n % 2)
    cdef Py_ssize_t half = players // 2
    cdef Py_ssize_t r, j, p, q, k, i, t
    cdef double g1, g2, ton, toff, theta, c, s, x, y, smax = 0.0
    cdef long[::1] ring = np.arange(players, dtype=np.int64)
    cdef long[::1] P = np.empty(half, dtype=np.int64)
    cdef long[::1] Q = np.empty(half, dtype=np.int64)
    cdef double[::1] C = np.empty(half)
    cdef double[::1] S = np.empty(half)
    cdef Py_ssize_t npair
    for r in range(players - 1):
        npair = 0
        for j in range(half):
            p = ring[j]
            q = ring[players - 1 - j]
            if p >= n or q >= n:
                continue
            if p > q:
                p, q = q, p
            ton = 0.0
            toff = 0.0
            for k in range(K):
                g1 = A[p, p, k] - A[q, q, k]
                g2 = A[p, q, k] + A[q, p, k]
                ton += g1 * g1 - g2 * g2
                toff += 2.0 * g1 * g2
            theta = 0.5 * atan2(toff, ton + sqrt(ton * ton + toff * toff))
            s = sin(theta)
            if fabs(s) <= threshold:
                continue
            if fabs(s) > smax:
                smax = fabs(s)
            P[npair] = p
            Q[npair] = q
            C[npair] = cos(theta)
            S[npair] = s
            npair += 1
        if npair:
            for j in range(npair):
                p = P[j]
                q = Q[j]
                c = C[j]
                s = S[j]
                for i in range(n):
                    for k in range(K):
                        x = A[p, i, k]
                        y = A[q, i, k]
                        A[p, i, k] = c * x + s * y
                        A[q, i, k] = c * y - s * x
                for i in range(m):
                    x = Vt[p, i]
                    y = Vt[q, i]
                    Vt[p, i] = c * x + s * y
                    Vt[q, i] = c * y - s * x
            for i in range(n):
                for j in range(npair):
                    p = P[j]
                    q = Q[j]
                    c = C[j]
                    s = S[j]
                    for k in range(K):
                        x = A[i, p, k]
                        y = A[i, q, k]
                        A[i, p, k] = c * x + s * y
                        A[i, q, k] = c * y - s * x
        # circle method: keep ring[0], rotate the rest by one
        t = ring[players - 1]
        for j in range(players - 1, 1, -1):
            ring[j] = ring[j - 1]
        ring[1] = t
    return smax
