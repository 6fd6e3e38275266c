"""Local feature map and scan-to-map correspondence construction.

The map holds world-frame edge and planar feature points, each class thinned
to one centroid per voxel cell, cropped to a radius around the sensor.  For
a batch of query points the matcher finds k nearest map points, fits a small
plane or line, and returns frozen targets for the window optimizer.

Planar map points are partitioned by the dominant axis of their surface
normal, and plane support is only drawn from the query's own partition.
Without this, a voxel cell at a wall/floor junction collects points from
both surfaces and its centroid lands on neither; nearest-neighbor support
contaminated by such cells produces slightly tilted plane fits that pass
every thickness gate yet bias the solved pose.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from srpslam import kernels


@dataclass
class MatchParams:
    knn_radius: float = 1.0
    knn_k: int = 5
    plane_fit_tol: float = 0.05      # every support point this close to the fit
    plane_min_spread: float = 0.05   # rms extent required along the 2nd axis
    line_eigen_ratio: float = 3.0    # dominant axis vs next
    point_residual_tol: float = 0.05  # reject matches this far from the fit
    normal_agreement_deg: float = 8.0   # fit normal vs query's own normal
    support_span: float = 2.0        # kth neighbor within span * voxel
    edge_voxel: float = 0.2
    planar_voxel: float = 0.4
    map_radius: float = 40.0


def normal_class(normals: np.ndarray) -> np.ndarray:
    """Dominant-axis label (0/1/2) per unit normal, -1 where invalid.

    The label is sign-free, so it is stable against the arbitrary orientation
    an eigendecomposition assigns to a fitted normal.
    """
    if normals.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    ok = np.einsum("qi,qi->q", normals, normals) > 0.5
    cls = np.argmax(np.abs(normals), axis=1).astype(np.int64)
    return np.where(ok, cls, -1)


class LocalFeatureMap:
    """Rolling voxel-thinned map of edge and planar feature points.

    Each voxel cell keeps the centroid of the first sweep that observed it.
    Cells never move once filled: re-merging old cells with new observations
    would let the map creep along with any systematic estimator offset, and
    the scan-to-map pull would then integrate that offset into open-loop
    drift.  A frozen anchor keeps the error bounded instead.  Planar cells
    are kept separately per normal class so that one cell never averages
    points of two intersecting surfaces.
    """

    def __init__(self, params: MatchParams | None = None):
        self.params = params if params is not None else MatchParams()
        self.edge = np.zeros((0, 3))
        self.planar = np.zeros((0, 3))
        self.planar_class = np.zeros(0, dtype=np.int64)

    def insert(self, edge_world: np.ndarray, planar_world: np.ndarray,
               center: np.ndarray | None = None,
               planar_normals: np.ndarray | None = None) -> None:
        """Add world-frame features to unoccupied cells; crop around ``center``.

        Planar points without a valid normal estimate are discarded — they sit
        on surface junctions where any cell centroid would be off-surface.
        """
        if edge_world.shape[0]:
            self.edge = self._merge(self.edge, edge_world, self.params.edge_voxel)
        if planar_world.shape[0]:
            if planar_normals is None:
                cls = np.zeros(planar_world.shape[0], dtype=np.int64)
            else:
                cls = normal_class(planar_normals)
            for c in range(3):
                sel = cls == c
                if not np.any(sel):
                    continue
                self._merge_planar(planar_world[sel], c)
        if center is not None:
            self.edge = self._crop(self.edge, center)
            keep = self._crop_mask(self.planar, center)
            self.planar = self.planar[keep]
            self.planar_class = self.planar_class[keep]

    @staticmethod
    def _cell_keys(pts: np.ndarray, voxel: float) -> np.ndarray:
        ijk = np.floor(pts / voxel).astype(np.int64) + (1 << 20)
        return (ijk[:, 0] << 42) | (ijk[:, 1] << 21) | ijk[:, 2]

    def _merge(self, existing: np.ndarray, new_pts: np.ndarray,
               voxel: float) -> np.ndarray:
        cells = kernels.voxel_downsample(new_pts, voxel)
        if existing.shape[0] == 0:
            return cells
        fresh = ~np.isin(self._cell_keys(cells, voxel),
                         self._cell_keys(existing, voxel))
        if not np.any(fresh):
            return existing
        return np.vstack([existing, cells[fresh]])

    def _merge_planar(self, new_pts: np.ndarray, cls: int) -> None:
        voxel = self.params.planar_voxel
        cells = kernels.voxel_downsample(new_pts, voxel)
        same = self.planar_class == cls
        if np.any(same):
            fresh = ~np.isin(self._cell_keys(cells, voxel),
                             self._cell_keys(self.planar[same], voxel))
            cells = cells[fresh]
        if cells.shape[0] == 0:
            return
        self.planar = np.vstack([self.planar, cells])
        self.planar_class = np.concatenate(
            [self.planar_class, np.full(cells.shape[0], cls, dtype=np.int64)]
        )

    def _crop_mask(self, pts: np.ndarray, center: np.ndarray) -> np.ndarray:
        if pts.shape[0] == 0:
            return np.zeros(0, dtype=bool)
        return np.linalg.norm(pts - center[None, :], axis=1) <= self.params.map_radius

    def _crop(self, pts: np.ndarray, center: np.ndarray) -> np.ndarray:
        if pts.shape[0] == 0:
            return pts
        return pts[self._crop_mask(pts, center)]

    @property
    def counts(self) -> tuple[int, int]:
        return self.edge.shape[0], self.planar.shape[0]


@dataclass
class PlaneTargets:
    """Frozen point-to-plane correspondences for one frame."""

    points: np.ndarray    # (N, 3) sensor frame
    normals: np.ndarray   # (N, 3) world frame
    ds: np.ndarray        # (N,)


@dataclass
class LineTargets:
    """Frozen point-to-line correspondences for one frame."""

    points: np.ndarray
    centers: np.ndarray
    directions: np.ndarray


def _empty_planes() -> PlaneTargets:
    return PlaneTargets(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0))


def _match_planar_subset(
    map_pts: np.ndarray,
    query_sensor: np.ndarray,
    query_world: np.ndarray,
    query_normals: np.ndarray,
    params: MatchParams,
) -> PlaneTargets:
    if query_world.shape[0] == 0 or map_pts.shape[0] < params.knn_k:
        return _empty_planes()
    idx, d2 = kernels.radius_neighbors(
        np.ascontiguousarray(query_world), np.ascontiguousarray(map_pts),
        params.knn_radius, params.knn_k,
    )
    span = params.support_span * params.planar_voxel
    full = (idx[:, -1] >= 0) & (d2[:, -1] <= span * span)
    if not np.any(full):
        return _empty_planes()
    idx = idx[full]
    neigh = map_pts[idx]                         # (Q, k, 3)
    centroid = neigh.mean(axis=1)
    centered = neigh - centroid[:, None, :]
    cov = np.einsum("qki,qkj->qij", centered, centered)
    vals, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]                      # smallest-eigenvalue direction
    ds = np.einsum("qi,qi->q", normals, centroid)
    resid = np.abs(np.einsum("qki,qi->qk", neigh, normals) - ds[:, None])
    # a usable fit must be thin along the normal *and* spread in two in-plane
    # directions — near-collinear support leaves the normal unconstrained
    spread = params.knn_k * params.plane_min_spread**2
    # the query itself must lie near the fitted plane: when the map has no
    # coverage of the surface under the query yet, the nearest neighbors all
    # come from a different surface and the fit, however clean, is wrong
    q_resid = np.abs(np.einsum("qi,qi->q", normals, query_world[full]) - ds)
    agree = np.abs(np.einsum("qi,qi->q", query_normals[full], normals))
    cos_tol = np.cos(np.radians(params.normal_agreement_deg))
    good = (
        (resid.max(axis=1) < params.plane_fit_tol)
        & (vals[:, 1] > spread)
        & (q_resid < params.point_residual_tol)
        & (agree >= cos_tol)
    )
    if not np.any(good):
        return _empty_planes()
    return PlaneTargets(
        points=query_sensor[full][good],
        normals=normals[good],
        ds=ds[good],
    )


def match_planar(
    map_planar: np.ndarray,
    map_class: np.ndarray,
    query_sensor: np.ndarray,
    query_world: np.ndarray,
    query_normals_world: np.ndarray,
    params: MatchParams,
) -> PlaneTargets:
    """Fit a plane to the k nearest same-class map points of each query.

    Queries without a valid own normal are dropped: they sit on junctions
    where no single plane association is meaningful.  Restricting support to
    the query's normal class prevents fits that straddle two surfaces.
    """
    if query_world.shape[0] == 0 or map_planar.shape[0] < params.knn_k:
        return _empty_planes()
    q_cls = normal_class(query_normals_world)
    parts = []
    for c in range(3):
        qs = q_cls == c
        ms = map_class == c
        if not np.any(qs) or int(ms.sum()) < params.knn_k:
            continue
        parts.append(_match_planar_subset(
            map_planar[ms], query_sensor[qs], query_world[qs],
            query_normals_world[qs], params,
        ))
    parts = [p for p in parts if p.points.shape[0]]
    if not parts:
        return _empty_planes()
    return PlaneTargets(
        points=np.vstack([p.points for p in parts]),
        normals=np.vstack([p.normals for p in parts]),
        ds=np.concatenate([p.ds for p in parts]),
    )


def match_edges(
    map_edge: np.ndarray,
    query_sensor: np.ndarray,
    query_world: np.ndarray,
    params: MatchParams,
) -> LineTargets:
    """Fit a line to the k nearest map edge points of each predicted query."""
    n_q = query_world.shape[0]
    empty = LineTargets(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3)))
    if n_q == 0 or map_edge.shape[0] < params.knn_k:
        return empty
    idx, d2 = kernels.radius_neighbors(
        np.ascontiguousarray(query_world), np.ascontiguousarray(map_edge),
        params.knn_radius, params.knn_k,
    )
    span = params.support_span * params.edge_voxel
    full = (idx[:, -1] >= 0) & (d2[:, -1] <= span * span)
    if not np.any(full):
        return empty
    idx = idx[full]
    neigh = map_edge[idx]
    centroid = neigh.mean(axis=1)
    centered = neigh - centroid[:, None, :]
    cov = np.einsum("qki,qkj->qij", centered, centered)
    vals, vecs = np.linalg.eigh(cov)
    directions = vecs[:, :, 2]
    off = query_world[full] - centroid
    q_resid = np.linalg.norm(np.cross(off, directions), axis=1)
    good = (
        (vals[:, 2] > params.line_eigen_ratio * np.maximum(vals[:, 1], 1e-12))
        & (q_resid < params.point_residual_tol)
    )
    if not np.any(good):
        return empty
    return LineTargets(
        points=query_sensor[full][good],
        centers=centroid[good],
        directions=directions[good],
    )


__all__ = [
    "LineTargets",
    "LocalFeatureMap",
    "MatchParams",
    "PlaneTargets",
    "match_edges",
    "match_planar",
    "normal_class",
]
