"""Pure-NumPy implementations of the hot numeric kernels.

These mirror the compiled extension exactly: arithmetic is written with an
explicit, fixed operation order (component-wise sums, no BLAS matmul where a
result feeds a comparison) so both backends agree to the last bit wherever a
discrete decision depends on a float, and to ~1e-12 elsewhere.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "fallback"

_KEY_OFFSET = 1 << 20  # grid coordinates packed as three 21-bit fields


def _pack_keys(cells: np.ndarray) -> np.ndarray:
    kx = cells[:, 0].astype(np.int64) + _KEY_OFFSET
    ky = cells[:, 1].astype(np.int64) + _KEY_OFFSET
    kz = cells[:, 2].astype(np.int64) + _KEY_OFFSET
    return (kx << 42) | (ky << 21) | kz


# ---------------------------------------------------------------------------
# ray casting against rectangle patches
# ---------------------------------------------------------------------------

def raycast_rects(
    origins: np.ndarray,
    dirs: np.ndarray,
    centers: np.ndarray,
    us: np.ndarray,
    vs: np.ndarray,
    hus: np.ndarray,
    hvs: np.ndarray,
    t_min: float,
    t_max: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Intersect N rays with M bounded rectangles.

    Returns (t, idx): ray parameter of the nearest hit (inf when the ray
    escapes) and the patch index (-1 when the ray escapes).  Ties go to the
    lowest patch index.
    """
    n_rays = origins.shape[0]
    if n_rays == 0 or centers.shape[0] == 0:
        return np.full(n_rays, np.inf), np.full(n_rays, -1, dtype=np.int64)

    # patch normals, fixed component order (u x v)
    wx = us[:, 1] * vs[:, 2] - us[:, 2] * vs[:, 1]
    wy = us[:, 2] * vs[:, 0] - us[:, 0] * vs[:, 2]
    wz = us[:, 0] * vs[:, 1] - us[:, 1] * vs[:, 0]

    ox, oy, oz = origins[:, 0:1], origins[:, 1:2], origins[:, 2:3]
    dx, dy, dz = dirs[:, 0:1], dirs[:, 1:2], dirs[:, 2:3]

    den = dx * wx + dy * wy + dz * wz                      # (N, M)
    cx = centers[:, 0] - ox
    cy = centers[:, 1] - oy
    cz = centers[:, 2] - oz
    num = cx * wx + cy * wy + cz * wz
    safe = np.where(np.abs(den) > 1e-12, den, 1.0)
    t = num / safe

    hx = ox + t * dx - centers[:, 0]
    hy = oy + t * dy - centers[:, 1]
    hz = oz + t * dz - centers[:, 2]
    a = hx * us[:, 0] + hy * us[:, 1] + hz * us[:, 2]
    b = hx * vs[:, 0] + hy * vs[:, 1] + hz * vs[:, 2]

    valid = (
        (np.abs(den) > 1e-12)
        & (t > t_min)
        & (t < t_max)
        & (np.abs(a) <= hus)
        & (np.abs(b) <= hvs)
    )
    t = np.where(valid, t, np.inf)
    idx = np.argmin(t, axis=1)
    best = t[np.arange(n_rays), idx]
    idx = np.where(np.isfinite(best), idx, -1).astype(np.int64)
    return best, idx


# ---------------------------------------------------------------------------
# per-ring curvature
# ---------------------------------------------------------------------------

def ring_curvature(points: np.ndarray, valid: np.ndarray, half_window: int) -> np.ndarray:
    """Smoothness of each point of one azimuth-ordered ring.

    c_k = |sum_{j in W(k)} (x_j - x_k)| / (|W| * |x_k|) over the symmetric
    index window of ``half_window`` points on each side.  Points whose window
    leaves the ring or touches an invalid return get curvature -1.
    """
    n = points.shape[0]
    curv = np.full(n, -1.0)
    if n < 2 * half_window + 1:
        return curv
    h = half_window
    x = points[:, 0]
    y = points[:, 1]
    z = points[:, 2]
    core = slice(h, n - h)
    sx = np.zeros(n - 2 * h)
    sy = np.zeros(n - 2 * h)
    sz = np.zeros(n - 2 * h)
    ok = valid[core].astype(bool).copy()
    for off in list(range(-h, 0)) + list(range(1, h + 1)):
        shifted = slice(h + off, n - h + off)
        sx = sx + (x[shifted] - x[core])
        sy = sy + (y[shifted] - y[core])
        sz = sz + (z[shifted] - z[core])
        ok &= valid[shifted].astype(bool)
    norm_k = np.sqrt(x[core] ** 2 + y[core] ** 2 + z[core] ** 2)
    ok &= norm_k > 1e-9
    mag = np.sqrt(sx**2 + sy**2 + sz**2)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = mag / (2.0 * h * norm_k)
    curv[core] = np.where(ok, c, -1.0)
    return curv


# ---------------------------------------------------------------------------
# voxel downsampling
# ---------------------------------------------------------------------------

def voxel_downsample(points: np.ndarray, voxel: float) -> np.ndarray:
    """Centroid of the points in each occupied voxel, in lexicographic cell
    order.  Centroids agree with the compiled path to ~1e-12 (summation order
    differs)."""
    if points.shape[0] == 0:
        return np.zeros((0, 3))
    cells = np.floor(points / voxel).astype(np.int64)
    keys = _pack_keys(cells)
    uniq, inverse = np.unique(keys, return_inverse=True)
    sums = np.zeros((uniq.shape[0], 3))
    np.add.at(sums, inverse, points)
    counts = np.bincount(inverse, minlength=uniq.shape[0]).astype(float)
    return sums / counts[:, None]


# ---------------------------------------------------------------------------
# fixed-radius k nearest neighbors on a uniform grid
# ---------------------------------------------------------------------------

def radius_neighbors(
    query: np.ndarray,
    data: np.ndarray,
    radius: float,
    k: int,
) -> tuple[np.ndarray, np.ndarray]:
    """For each query point, the k nearest data points within ``radius``.

    Returns (idx, d2) of shape (Q, k); unfilled slots hold -1 / inf.  Exact
    ties in distance are broken by the lower data index, so results do not
    depend on storage order tricks in either backend.
    """
    n_q = query.shape[0]
    idx_out = np.full((n_q, k), -1, dtype=np.int64)
    d2_out = np.full((n_q, k), np.inf)
    if n_q == 0 or data.shape[0] == 0:
        return idx_out, d2_out

    cell = radius
    data_keys = _pack_keys(np.floor(data / cell).astype(np.int64))
    order = np.argsort(data_keys, kind="stable")
    sorted_keys = data_keys[order]

    q_cells = np.floor(query / cell).astype(np.int64)
    r2 = radius * radius

    qid_parts = []
    cand_parts = []
    for ox in (-1, 0, 1):
        for oy in (-1, 0, 1):
            for oz in (-1, 0, 1):
                keys = _pack_keys(q_cells + np.array([ox, oy, oz]))
                lo = np.searchsorted(sorted_keys, keys, side="left")
                hi = np.searchsorted(sorted_keys, keys, side="right")
                counts = hi - lo
                total = int(counts.sum())
                if total == 0:
                    continue
                qid = np.repeat(np.arange(n_q), counts)
                starts = np.cumsum(counts) - counts
                flat = np.arange(total) - np.repeat(starts, counts) + np.repeat(lo, counts)
                qid_parts.append(qid)
                cand_parts.append(order[flat])
    if not qid_parts:
        return idx_out, d2_out

    qid = np.concatenate(qid_parts)
    cand = np.concatenate(cand_parts)
    dx = query[qid, 0] - data[cand, 0]
    dy = query[qid, 1] - data[cand, 1]
    dz = query[qid, 2] - data[cand, 2]
    d2 = dx * dx + dy * dy + dz * dz
    keep = d2 <= r2
    qid, cand, d2 = qid[keep], cand[keep], d2[keep]
    if qid.size == 0:
        return idx_out, d2_out

    rank_order = np.lexsort((cand, d2, qid))
    qid, cand, d2 = qid[rank_order], cand[rank_order], d2[rank_order]
    first = np.concatenate(([True], qid[1:] != qid[:-1]))
    run_starts = np.flatnonzero(first)
    run_lengths = np.diff(np.append(run_starts, qid.size))
    rank = np.arange(qid.size) - np.repeat(run_starts, run_lengths)
    sel = rank < k
    idx_out[qid[sel], rank[sel]] = cand[sel]
    d2_out[qid[sel], rank[sel]] = d2[sel]
    return idx_out, d2_out


# ---------------------------------------------------------------------------
# batched plane-hypothesis scoring
# ---------------------------------------------------------------------------

def plane_inlier_counts(
    points: np.ndarray,
    normals: np.ndarray,
    ds: np.ndarray,
    thresh: float,
) -> np.ndarray:
    """Number of points with |n·x - d| < thresh, for each hypothesis row."""
    if points.shape[0] == 0 or normals.shape[0] == 0:
        return np.zeros(normals.shape[0], dtype=np.int64)
    proj = (
        points[:, 0:1] * normals[:, 0]
        + points[:, 1:2] * normals[:, 1]
        + points[:, 2:3] * normals[:, 2]
    )
    return np.count_nonzero(np.abs(proj - ds) < thresh, axis=0).astype(np.int64)
