# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the hot numeric kernels.

Semantics match srpslam.kernels._fallback exactly; see that module for the
contract of each function.  Arithmetic expressions are kept in the same fixed
order as the fallback so discrete outputs (hit indices, neighbor indices,
inlier counts) are bit-for-bit identical between backends.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, fabs, floor, sqrt

cnp.import_array()

BACKEND_NAME = "compiled"

DEF KEY_OFFSET = 1048576  # 1 << 20


def raycast_rects(
    cnp.ndarray[cnp.float64_t, ndim=2] origins,
    cnp.ndarray[cnp.float64_t, ndim=2] dirs,
    cnp.ndarray[cnp.float64_t, ndim=2] centers,
    cnp.ndarray[cnp.float64_t, ndim=2] us,
    cnp.ndarray[cnp.float64_t, ndim=2] vs,
    cnp.ndarray[cnp.float64_t, ndim=1] hus,
    cnp.ndarray[cnp.float64_t, ndim=1] hvs,
    double t_min,
    double t_max,
):
    cdef Py_ssize_t n_rays = origins.shape[0]
    cdef Py_ssize_t n_pat = centers.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] t_out = np.full(n_rays, np.inf)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] idx_out = np.full(n_rays, -1, dtype=np.int64)
    if n_rays == 0 or n_pat == 0:
        return t_out, idx_out

    cdef cnp.ndarray[cnp.float64_t, ndim=1] wx = np.empty(n_pat)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] wy = np.empty(n_pat)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] wz = np.empty(n_pat)
    cdef Py_ssize_t i, m
    for m in range(n_pat):
        wx[m] = us[m, 1] * vs[m, 2] - us[m, 2] * vs[m, 1]
        wy[m] = us[m, 2] * vs[m, 0] - us[m, 0] * vs[m, 2]
        wz[m] = us[m, 0] * vs[m, 1] - us[m, 1] * vs[m, 0]

    cdef double ox, oy, oz, dx, dy, dz
    cdef double den, num, t, hx, hy, hz, a, b, best
    cdef Py_ssize_t best_idx
    for i in range(n_rays):
        ox = origins[i, 0]; oy = origins[i, 1]; oz = origins[i, 2]
        dx = dirs[i, 0]; dy = dirs[i, 1]; dz = dirs[i, 2]
        best = INFINITY
        best_idx = -1
        for m in range(n_pat):
            den = dx * wx[m] + dy * wy[m] + dz * wz[m]
            if fabs(den) <= 1e-12:
                continue
            num = ((centers[m, 0] - ox) * wx[m]
                   + (centers[m, 1] - oy) * wy[m]
                   + (centers[m, 2] - oz) * wz[m])
            t = num / den
            if t <= t_min or t >= t_max:
                continue
            hx = ox + t * dx - centers[m, 0]
            hy = oy + t * dy - centers[m, 1]
            hz = oz + t * dz - centers[m, 2]
            a = hx * us[m, 0] + hy * us[m, 1] + hz * us[m, 2]
            if fabs(a) > hus[m]:
                continue
            b = hx * vs[m, 0] + hy * vs[m, 1] + hz * vs[m, 2]
            if fabs(b) > hvs[m]:
                continue
            if t < best:
                best = t
                best_idx = m
        t_out[i] = best
        idx_out[i] = best_idx
    return t_out, idx_out


def ring_curvature(
    cnp.ndarray[cnp.float64_t, ndim=2] points,
    cnp.ndarray[cnp.uint8_t, ndim=1] valid,
    int half_window,
):
    cdef Py_ssize_t n = points.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] curv = np.full(n, -1.0)
    cdef int h = half_window
    if n < 2 * h + 1:
        return curv
    cdef Py_ssize_t k, j
    cdef double sx, sy, sz, xk, yk, zk, norm_k, mag
    cdef bint ok
    for k in range(h, n - h):
        if not valid[k]:
            continue
        ok = True
        xk = points[k, 0]; yk = points[k, 1]; zk = points[k, 2]
        sx = 0.0; sy = 0.0; sz = 0.0
        for j in range(k - h, k + h + 1):
            if j == k:
                continue
            if not valid[j]:
                ok = False
                break
            sx = sx + (points[j, 0] - xk)
            sy = sy + (points[j, 1] - yk)
            sz = sz + (points[j, 2] - zk)
        if not ok:
            continue
        norm_k = sqrt(xk * xk + yk * yk + zk * zk)
        if norm_k <= 1e-9:
            continue
        mag = sqrt(sx * sx + sy * sy + sz * sz)
        curv[k] = mag / (2.0 * h * norm_k)
    return curv


def voxel_downsample(cnp.ndarray[cnp.float64_t, ndim=2] points, double voxel):
    cdef Py_ssize_t n = points.shape[0]
    if n == 0:
        return np.zeros((0, 3))
    cdef cnp.ndarray[cnp.int64_t, ndim=1] keys = np.empty(n, dtype=np.int64)
    cdef Py_ssize_t i
    cdef long long kx, ky, kz
    for i in range(n):
        kx = <long long>floor(points[i, 0] / voxel) + KEY_OFFSET
        ky = <long long>floor(points[i, 1] / voxel) + KEY_OFFSET
        kz = <long long>floor(points[i, 2] / voxel) + KEY_OFFSET
        keys[i] = (kx << 42) | (ky << 21) | kz
    cdef cnp.ndarray[cnp.int64_t, ndim=1] order = np.argsort(keys, kind="stable").astype(np.int64)
    cdef Py_ssize_t n_groups = 0
    cdef long long prev = -1
    for i in range(n):
        if keys[order[i]] != prev:
            n_groups += 1
            prev = keys[order[i]]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((n_groups, 3))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] counts = np.zeros(n_groups)
    cdef Py_ssize_t g = -1
    cdef Py_ssize_t src
    prev = -1
    for i in range(n):
        src = order[i]
        if keys[src] != prev:
            g += 1
            prev = keys[src]
        out[g, 0] += points[src, 0]
        out[g, 1] += points[src, 1]
        out[g, 2] += points[src, 2]
        counts[g] += 1.0
    for g in range(n_groups):
        out[g, 0] /= counts[g]
        out[g, 1] /= counts[g]
        out[g, 2] /= counts[g]
    return out


cdef inline Py_ssize_t _lower_bound(cnp.int64_t[:] arr, Py_ssize_t n, long long key) nogil:
    cdef Py_ssize_t lo = 0, hi = n, mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if arr[mid] < key:
            lo = mid + 1
        else:
            hi = mid
    return lo


cdef inline Py_ssize_t _upper_bound(cnp.int64_t[:] arr, Py_ssize_t n, long long key) nogil:
    cdef Py_ssize_t lo = 0, hi = n, mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if arr[mid] <= key:
            lo = mid + 1
        else:
            hi = mid
    return lo


def radius_neighbors(
    cnp.ndarray[cnp.float64_t, ndim=2] query,
    cnp.ndarray[cnp.float64_t, ndim=2] data,
    double radius,
    int k,
):
    cdef Py_ssize_t n_q = query.shape[0]
    cdef Py_ssize_t n_d = data.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=2] idx_out = np.full((n_q, k), -1, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] d2_out = np.full((n_q, k), np.inf)
    if n_q == 0 or n_d == 0:
        return idx_out, d2_out

    cdef cnp.ndarray cell_arr = np.floor(data / radius).astype(np.int64)
    cdef cnp.int64_t[:, :] cells = cell_arr
    cdef cnp.ndarray[cnp.int64_t, ndim=1] keys = np.empty(n_d, dtype=np.int64)
    cdef Py_ssize_t i
    for i in range(n_d):
        keys[i] = (((cells[i, 0] + KEY_OFFSET) << 42)
                   | ((cells[i, 1] + KEY_OFFSET) << 21)
                   | (cells[i, 2] + KEY_OFFSET))
    cdef cnp.ndarray[cnp.int64_t, ndim=1] order = np.argsort(keys, kind="stable").astype(np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] sorted_keys = keys[order]
    cdef cnp.int64_t[:] skeys = sorted_keys
    cdef cnp.int64_t[:] sorder = order

    cdef cnp.ndarray q_cell_arr = np.floor(query / radius).astype(np.int64)
    cdef cnp.int64_t[:, :] q_cells = q_cell_arr

    cdef double r2 = radius * radius
    cdef double qx, qy, qz, dx, dy, dz, d2
    cdef long long key
    cdef Py_ssize_t q, lo, hi, pos, cand, slot, s
    cdef int ox, oy, oz
    # per-query k-best scratch, ordered by (d2, index)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] best_d2 = np.empty(k)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] best_idx = np.empty(k, dtype=np.int64)
    cdef int n_best

    for q in range(n_q):
        qx = query[q, 0]; qy = query[q, 1]; qz = query[q, 2]
        n_best = 0
        for ox in range(-1, 2):
            for oy in range(-1, 2):
                for oz in range(-1, 2):
                    key = (((q_cells[q, 0] + ox + KEY_OFFSET) << 42)
                           | ((q_cells[q, 1] + oy + KEY_OFFSET) << 21)
                           | (q_cells[q, 2] + oz + KEY_OFFSET))
                    lo = _lower_bound(skeys, n_d, key)
                    hi = _upper_bound(skeys, n_d, key)
                    for pos in range(lo, hi):
                        cand = sorder[pos]
                        dx = qx - data[cand, 0]
                        dy = qy - data[cand, 1]
                        dz = qz - data[cand, 2]
                        d2 = dx * dx + dy * dy + dz * dz
                        if d2 > r2:
                            continue
                        # insertion into the (d2, index)-ordered k-best list
                        if n_best == k and (
                            d2 > best_d2[k - 1]
                            or (d2 == best_d2[k - 1] and cand > best_idx[k - 1])
                        ):
                            continue
                        slot = n_best if n_best < k else k - 1
                        s = slot
                        while s > 0 and (
                            best_d2[s - 1] > d2
                            or (best_d2[s - 1] == d2 and best_idx[s - 1] > cand)
                        ):
                            best_d2[s] = best_d2[s - 1]
                            best_idx[s] = best_idx[s - 1]
                            s -= 1
                        best_d2[s] = d2
                        best_idx[s] = cand
                        if n_best < k:
                            n_best += 1
        for s in range(n_best):
            idx_out[q, s] = best_idx[s]
            d2_out[q, s] = best_d2[s]
    return idx_out, d2_out


def plane_inlier_counts(
    cnp.ndarray[cnp.float64_t, ndim=2] points,
    cnp.ndarray[cnp.float64_t, ndim=2] normals,
    cnp.ndarray[cnp.float64_t, ndim=1] ds,
    double thresh,
):
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t n_h = normals.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] counts = np.zeros(n_h, dtype=np.int64)
    if n == 0 or n_h == 0:
        return counts
    cdef Py_ssize_t i, hh
    cdef double nx, ny, nz, d, acc
    cdef long long c
    for hh in range(n_h):
        nx = normals[hh, 0]; ny = normals[hh, 1]; nz = normals[hh, 2]
        d = ds[hh]
        c = 0
        for i in range(n):
            acc = points[i, 0] * nx + points[i, 1] * ny + points[i, 2] * nz
            if fabs(acc - d) < thresh:
                c += 1
        counts[hh] = c
    return counts
