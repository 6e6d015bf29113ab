# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled ray/triangle kernel. Mirrors ``_raycast_py.first_hits`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()

cdef double DET_EPS = 1e-9


def first_hits(double[:, ::1] origins, double[:, ::1] dirs,
               double[:, ::1] v0, double[:, ::1] e1, double[:, ::1] e2,
               long long[::1] offsets, double tmax):
    cdef Py_ssize_t n_rays = origins.shape[0]
    t_arr = np.full(n_rays, tmax, dtype=np.float64)
    idx_arr = np.full(n_rays, -1, dtype=np.int64)
    cdef double[::1] t_out = t_arr
    cdef long long[::1] idx_out = idx_arr
    cdef Py_ssize_t r, k
    cdef double ox, oy, oz, dx, dy, dz
    cdef double b0, b1, b2, c0, c1, c2, p0, p1, p2, det, inv
    cdef double s0, s1, s2, q0, q1, q2, u, v, t, best_t
    cdef long long best_k
    with nogil:
        for r in range(n_rays):
            ox = origins[r, 0]; oy = origins[r, 1]; oz = origins[r, 2]
            dx = dirs[r, 0]; dy = dirs[r, 1]; dz = dirs[r, 2]
            best_t = tmax
            best_k = -1
            for k in range(offsets[r], offsets[r + 1]):
                b0 = e1[k, 0]; b1 = e1[k, 1]; b2 = e1[k, 2]
                c0 = e2[k, 0]; c1 = e2[k, 1]; c2 = e2[k, 2]
                p0 = dy * c2 - dz * c1
                p1 = dz * c0 - dx * c2
                p2 = dx * c1 - dy * c0
                det = b0 * p0 + b1 * p1 + b2 * p2
                if fabs(det) < DET_EPS:
                    continue
                inv = 1.0 / det
                s0 = ox - v0[k, 0]
                s1 = oy - v0[k, 1]
                s2 = oz - v0[k, 2]
                u = (s0 * p0 + s1 * p1 + s2 * p2) * inv
                if u < 0.0 or u > 1.0:
                    continue
                q0 = s1 * b2 - s2 * b1
                q1 = s2 * b0 - s0 * b2
                q2 = s0 * b1 - s1 * b0
                v = (dx * q0 + dy * q1 + dz * q2) * inv
                if v < 0.0 or u + v > 1.0:
                    continue
                t = (c0 * q0 + c1 * q1 + c2 * q2) * inv
                if t <= 0.0 or t > tmax:
                    continue
                if best_k < 0 or t < best_t:
                    best_t = t
                    best_k = k
            if best_k >= 0:
                t_out[r] = best_t
                idx_out[r] = best_k
    return t_arr, idx_arr
