"""Pure-numpy ray/triangle kernel; fallback for the compiled ``_kernels`` module.

Both backends evaluate the same arithmetic in the same order so that results
agree bitwise on IEEE doubles (the extension is built without FMA contraction).
"""

import numpy as np

DET_EPS = 1e-9


def first_hits(origins, dirs, v0, e1, e2, offsets, tmax):
    """Nearest hit per ray; ray ``r`` is tested against triangles ``offsets[r]:offsets[r+1]``.

    Returns ``(t, tri)`` where ``tri`` is the global triangle index or -1 on a miss
    (``t`` is then ``tmax``). Equal-``t`` ties keep the lowest triangle index.
    """
    n_rays = origins.shape[0]
    t_out = np.full(n_rays, tmax, dtype=np.float64)
    idx_out = np.full(n_rays, -1, dtype=np.int64)
    for r in range(n_rays):
        lo, hi = int(offsets[r]), int(offsets[r + 1])
        if hi <= lo:
            continue
        ox, oy, oz = origins[r]
        dx, dy, dz = dirs[r]
        a0, a1, a2 = v0[lo:hi, 0], v0[lo:hi, 1], v0[lo:hi, 2]
        b0, b1, b2 = e1[lo:hi, 0], e1[lo:hi, 1], e1[lo:hi, 2]
        c0, c1, c2 = e2[lo:hi, 0], e2[lo:hi, 1], e2[lo:hi, 2]

        p0 = dy * c2 - dz * c1
        p1 = dz * c0 - dx * c2
        p2 = dx * c1 - dy * c0
        det = b0 * p0 + b1 * p1 + b2 * p2
        ok = np.abs(det) >= DET_EPS
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / det
            s0 = ox - a0
            s1 = oy - a1
            s2 = oz - a2
            u = (s0 * p0 + s1 * p1 + s2 * p2) * inv
            q0 = s1 * b2 - s2 * b1
            q1 = s2 * b0 - s0 * b2
            q2 = s0 * b1 - s1 * b0
            v = (dx * q0 + dy * q1 + dz * q2) * inv
            t = (c0 * q0 + c1 * q1 + c2 * q2) * inv
        ok &= (u >= 0.0) & (u <= 1.0) & (v >= 0.0) & (u + v <= 1.0)
        ok &= (t > 0.0) & (t <= tmax)
        if not ok.any():
            continue
        cand = np.flatnonzero(ok)
        tc = t[cand]
        best = cand[np.argmin(tc)]  # argmin returns the first minimum
        t_out[r] = t[best]
        idx_out[r] = lo + best
    return t_out, idx_out
