"""Sweep container, motion deskew, and curvature-based feature extraction.

A sweep is deskewed into its end-of-sweep sensor frame: given the relative
pose of the sweep-start frame expressed in the end frame, each point is moved
by the geodesic interpolation of that transform at its capture fraction.

Feature extraction follows the ring/sector recipe: per-ring curvature over a
symmetric index window, ring split into fixed azimuth sectors, a capped
number of high-curvature edge points and low-curvature planar points per
sector, index-neighborhood suppression, and gates that drop occlusion
boundaries and near-parallel beams.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from srpslam.errors import TooFewPoints
from srpslam.geometry import Pose, quat_to_rotvec, rotvecs_to_matrices
from srpslam import kernels


@dataclass
class Sweep:
    """One LiDAR revolution in the sensor frame at capture time."""

    index: int
    t_start: float
    t_end: float
    times: np.ndarray
    points: np.ndarray
    rings: np.ndarray


@dataclass
class FeatureSet:
    """Edge and planar feature points of one sweep (deskewed sensor frame)."""

    edge: np.ndarray
    planar: np.ndarray

    @property
    def counts(self) -> tuple[int, int]:
        return self.edge.shape[0], self.planar.shape[0]


@dataclass
class FeatureParams:
    half_window: int = 5
    sectors: int = 6
    edge_threshold: float = 0.1
    planar_threshold: float = 0.05
    max_edge_per_sector: int = 2
    max_planar_per_sector: int = 12
    suppression: int = 5
    suppress_radius: float = 0.25
    occlusion_gap: float = 0.3
    parallel_ratio: float = 0.02


def deskew(sweep: Sweep, start_in_end: Pose) -> np.ndarray:
    """Move every point into the end-of-sweep frame.

    ``start_in_end`` is the pose of the sweep-start sensor frame expressed in
    the end frame; a point captured at fraction s of the sweep is transformed
    by the geodesic interpolation of that pose at 1 - s (identity at the end
    of the sweep, the full transform at the start).
    """
    span = sweep.t_end - sweep.t_start
    if span <= 0.0 or sweep.points.shape[0] == 0:
        return sweep.points.copy()
    s = np.clip((sweep.times - sweep.t_start) / span, 0.0, 1.0)
    uniq, inv = np.unique(s, return_inverse=True)
    w = 1.0 - uniq
    phi = quat_to_rotvec(start_in_end.q)
    rots = rotvecs_to_matrices(w[:, None] * phi[None, :])
    trans = w[:, None] * start_in_end.t[None, :]
    return (
        np.einsum("nij,nj->ni", rots[inv], sweep.points) + trans[inv]
    )


def deskew_with_states(
    sweep: Sweep,
    state_times: np.ndarray,
    positions: np.ndarray,
    quats: np.ndarray,
    end_pose: Pose,
) -> np.ndarray:
    """Move every point into the end-of-sweep frame using a dense sequence of
    world-frame sensor states covering the sweep.

    ``state_times`` must be increasing and bracket every point timestamp; the
    pose at a point's capture time is interpolated geodesically between the
    two bracketing states, so the error of the constant-velocity assumption
    is confined to one inter-state interval instead of the whole sweep.
    """
    if sweep.points.shape[0] == 0:
        return sweep.points.copy()
    uniq, inv = np.unique(sweep.times, return_inverse=True)
    k = np.clip(np.searchsorted(state_times, uniq, side="right") - 1, 0,
                state_times.size - 2)
    t0 = state_times[k]
    t1 = state_times[k + 1]
    alpha = np.clip((uniq - t0) / np.maximum(t1 - t0, 1e-12), 0.0, 1.0)

    q_a = quats[k]
    q_b = quats[k + 1]
    # relative rotation per bracketing pair, scaled by alpha
    q_rel = _quat_mul_batch(_quat_conj_batch(q_a), q_b)
    phi = _quat_log_batch(q_rel)
    rot_step = rotvecs_to_matrices(alpha[:, None] * phi)
    rot_a = _quats_to_matrices(q_a)
    rot_c = rot_a @ rot_step
    p_c = (1.0 - alpha)[:, None] * positions[k] + alpha[:, None] * positions[k + 1]

    inv_end = end_pose.inverse()
    r_e = inv_end.rotation
    rot_ec = np.einsum("ij,njk->nik", r_e, rot_c)
    t_ec = p_c @ r_e.T + inv_end.t
    return (
        np.einsum("nij,nj->ni", rot_ec[inv], sweep.points) + t_ec[inv]
    )


def _quat_conj_batch(q: np.ndarray) -> np.ndarray:
    out = -q.copy()
    out[:, 3] = q[:, 3]
    return out


def _quat_mul_batch(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ax, ay, az, aw = a[:, 0], a[:, 1], a[:, 2], a[:, 3]
    bx, by, bz, bw = b[:, 0], b[:, 1], b[:, 2], b[:, 3]
    return np.stack(
        [
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
            aw * bw - ax * bx - ay * by - az * bz,
        ],
        axis=-1,
    )


def _quat_log_batch(q: np.ndarray) -> np.ndarray:
    q = np.where(q[:, 3:4] < 0.0, -q, q)
    vn = np.linalg.norm(q[:, :3], axis=1)
    small = vn < 1e-10
    angle = 2.0 * np.arctan2(vn, q[:, 3])
    scale = np.where(small, 2.0 / np.maximum(q[:, 3], 1e-12), angle / np.maximum(vn, 1e-300))
    return q[:, :3] * scale[:, None]


def _quats_to_matrices(q: np.ndarray) -> np.ndarray:
    from srpslam.geometry import quats_to_matrices

    return quats_to_matrices(q)


def extract_features(
    points: np.ndarray,
    rings: np.ndarray,
    params: FeatureParams | None = None,
) -> FeatureSet:
    """Select edge/planar feature points from a (deskewed) sweep."""
    if params is None:
        params = FeatureParams()
    if points.shape[0] < 2 * params.half_window + 1:
        raise TooFewPoints(f"sweep has only {points.shape[0]} points")

    edge_parts: list[np.ndarray] = []
    planar_parts: list[np.ndarray] = []
    sector_width = 2.0 * np.pi / params.sectors

    for ring in np.unique(rings):
        sel = np.flatnonzero(rings == ring)
        pts = points[sel]
        n = pts.shape[0]
        if n < 2 * params.half_window + 1:
            continue
        valid = np.ones(n, dtype=np.uint8)
        curv = kernels.ring_curvature(np.ascontiguousarray(pts), valid, params.half_window)
        ranges = np.sqrt(pts[:, 0] ** 2 + pts[:, 1] ** 2 + pts[:, 2] ** 2)

        usable = curv >= 0.0
        # occlusion boundaries: a large range step hides the far side
        gap = np.diff(ranges)
        h = params.suppression
        occluded = np.zeros(n, dtype=bool)
        jumps = np.flatnonzero(np.abs(gap) > params.occlusion_gap)
        for j in jumps:
            if gap[j] > 0.0:
                occluded[j + 1 : min(n, j + 1 + h + 1)] = True
            else:
                occluded[max(0, j - h) : j + 1] = True
        # near-parallel beams: both neighbors far away relative to range
        parallel = np.zeros(n, dtype=bool)
        if n > 2:
            d_prev = np.abs(np.concatenate(([0.0], gap)))
            d_next = np.abs(np.concatenate((gap, [0.0])))
            parallel[1:-1] = (
                (d_prev[1:-1] > params.parallel_ratio * ranges[1:-1])
                & (d_next[1:-1] > params.parallel_ratio * ranges[1:-1])
            )
        usable &= ~occluded & ~parallel

        az = np.arctan2(pts[:, 1], pts[:, 0])
        sector = np.clip(
            ((az + np.pi) / sector_width).astype(np.int64), 0, params.sectors - 1
        )
        picked = np.zeros(n, dtype=bool)
        # Suppression works in arc length along the ring, not in indices:
        # point spacing varies by two orders of magnitude between close-range
        # and grazing returns, and an index window lets picks pile up where
        # the ring is densest instead of spreading over the scene.
        arc = np.concatenate(
            ([0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))
        )

        def suppress(k: int) -> None:
            lo = int(np.searchsorted(arc, arc[k] - params.suppress_radius))
            hi = int(np.searchsorted(arc, arc[k] + params.suppress_radius))
            picked[lo : hi + 1] = True

        for sec in range(params.sectors):
            in_sec = np.flatnonzero((sector == sec) & usable)
            if in_sec.size == 0:
                continue
            order = in_sec[np.argsort(curv[in_sec], kind="stable")]
            n_edge = 0
            for k in order[::-1]:
                if n_edge >= params.max_edge_per_sector:
                    break
                if curv[k] <= params.edge_threshold:
                    break
                if picked[k]:
                    continue
                edge_parts.append(pts[k])
                suppress(k)
                n_edge += 1
            n_planar = 0
            for k in order:
                if n_planar >= params.max_planar_per_sector:
                    break
                if curv[k] >= params.planar_threshold:
                    break
                if picked[k]:
                    continue
                planar_parts.append(pts[k])
                suppress(k)
                n_planar += 1

    edge = np.array(edge_parts) if edge_parts else np.zeros((0, 3))
    planar = np.array(planar_parts) if planar_parts else np.zeros((0, 3))
    return FeatureSet(edge=edge, planar=planar)


def downsample(points: np.ndarray, voxel: float) -> np.ndarray:
    """Voxel-centroid thinning (order follows lexicographic cell order)."""
    if points.shape[0] == 0:
        return points.copy()
    return kernels.voxel_downsample(np.ascontiguousarray(points, dtype=float), voxel)


def estimate_normals(queries: np.ndarray, cloud: np.ndarray,
                     radius: float = 0.3, k: int = 6,
                     confidence: float = 5.0) -> np.ndarray:
    """Unit surface normal of each query from its cloud neighborhood.

    Both inputs are expected in the sensor frame.  The neighborhood radius
    grows with range so that distant queries — where consecutive scan rings
    land far apart — still collect support from more than a single ring arc;
    a fixed small radius would leave them with collinear neighbors whose
    fitted normal is dominated by measurement noise.

    A query's normal is kept only when the neighborhood is convincingly
    planar: the middle eigenvalue of its scatter must exceed ``confidence``
    times the smallest.  Everything else (thin arcs, corner neighborhoods,
    rows with fewer than k neighbors) comes back as zeros; the orientation
    of the returned normals is arbitrary.
    """
    n_q = queries.shape[0]
    normals = np.zeros((n_q, 3))
    if n_q == 0 or cloud.shape[0] < k:
        return normals
    ranges = np.linalg.norm(queries, axis=1)
    cloud = np.ascontiguousarray(cloud)
    bands = [
        (0.0, 3.0, radius, k),
        (3.0, 6.0, max(radius, 0.55), k + 2),
        (6.0, 10.0, max(radius, 0.85), k + 4),
        (10.0, np.inf, max(radius, 1.25), k + 6),
    ]
    for lo, hi, r, kk in bands:
        sel = np.nonzero((ranges >= lo) & (ranges < hi))[0]
        if sel.size == 0:
            continue
        idx, _ = kernels.radius_neighbors(
            np.ascontiguousarray(queries[sel]), cloud, r, kk
        )
        full = idx[:, -1] >= 0
        if not np.any(full):
            continue
        neigh = cloud[idx[full]]
        centered = neigh - neigh.mean(axis=1, keepdims=True)
        cov = np.einsum("qki,qkj->qij", centered, centered)
        vals, vecs = np.linalg.eigh(cov)
        planar = vals[:, 1] > confidence * vals[:, 0]
        rows = sel[full][planar]
        normals[rows] = vecs[planar, :, 0]
    return normals


__all__ = [
    "FeatureParams",
    "FeatureSet",
    "Sweep",
    "deskew",
    "deskew_with_states",
    "downsample",
    "estimate_normals",
    "extract_features",
]
