"""Keyframe selection, structural-plane extraction, and the global plane
registry.

A keyframe's dominant planes (floor, walls) repeat across the stories of a
building; re-observing one of them from a later keyframe yields a global
constraint that is immune to the odometry's accumulated drift.  This module
extracts up to three such planes per keyframe with RANSAC and matches them
against every plane previously added to the registry, transformed into the
new keyframe's frame through the current pose estimates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from srpslam.errors import NoPlanesFound, TooFewPoints
from srpslam.geometry import HessePlane, Pose, quat_to_ypr, transform_plane


@dataclass
class SrpParams:
    keyframe_translation: float = 1.0
    keyframe_attitude_deg: float = 10.0
    inlier_threshold: float = 0.05
    min_inliers: int = 400
    max_iterations: int = 1000
    confidence: float = 0.99
    hypothesis_batch: int = 128
    orth_tol: float = 0.15
    consume_fraction: float = 0.95
    max_candidates: int = 8
    match_angle_deg: float = 5.0
    match_distance: float = 0.2
    registry_radius: float = 30.0
    min_abs_d: float = 0.05


@dataclass
class SrpObservation:
    """One structural plane in the observing keyframe's frame."""

    plane: HessePlane
    inliers: int


@dataclass
class Keyframe:
    id: int
    pose: Pose
    sweep_index: int
    srps: list[SrpObservation] = field(default_factory=list)


@dataclass
class GlobalPlaneRecord:
    plane_id: int
    owner_id: int
    plane: HessePlane  # expressed in the owner keyframe's frame
    support: int


@dataclass
class SrpMatch:
    keyframe_id: int
    plane_index: int
    record: GlobalPlaneRecord
    observed: HessePlane
    dtheta: float
    dd: float


def is_keyframe(current: Pose, last_keyframe: Pose,
                params: SrpParams | None = None) -> bool:
    """Promote a pose to a keyframe on enough translation or tilt.

    Yaw is deliberately ignored: turning in place re-observes the same
    structure and would only add redundant vertices.
    """
    p = params if params is not None else SrpParams()
    rel = last_keyframe.inverse().compose(current)
    if np.linalg.norm(rel.t) > p.keyframe_translation:
        return True
    _, pitch, roll = quat_to_ypr(rel.q)
    lim = np.radians(p.keyframe_attitude_deg)
    return abs(pitch) > lim or abs(roll) > lim


def _ransac_one(points: np.ndarray, rng: np.random.Generator,
                p: SrpParams) -> tuple[HessePlane, np.ndarray] | None:
    """Best single plane among ``points``, or None below the support floor.

    Hypotheses are drawn in fixed-size batches so the adaptive stopping rule
    consumes the RNG identically regardless of where the winner appears.
    """
    n = points.shape[0]
    if n < 3:
        return None
    best_count = 0
    best_inliers: np.ndarray | None = None
    needed = p.max_iterations
    done = 0
    while done < min(needed, p.max_iterations):
        m = min(p.hypothesis_batch, p.max_iterations - done)
        sel = rng.integers(0, n, size=(m, 3))
        a = points[sel[:, 0]]
        b = points[sel[:, 1]]
        c = points[sel[:, 2]]
        nrm = np.cross(b - a, c - a)
        length = np.linalg.norm(nrm, axis=1)
        ok = length > 1e-9
        nrm[ok] /= length[ok, None]
        for j in np.flatnonzero(ok):
            d = float(nrm[j] @ a[j])
            resid = np.abs(points @ nrm[j] - d)
            inl = resid < p.inlier_threshold
            count = int(inl.sum())
            if count > best_count:
                best_count = count
                best_inliers = inl
                w = count / n
                if w >= 1.0:
                    needed = done + 1
                else:
                    k = np.log1p(-p.confidence) / np.log1p(-min(w**3, 1 - 1e-12))
                    needed = int(np.ceil(k))
        done += m
    if best_inliers is None or best_count < p.min_inliers:
        return None
    # least-squares refit on the inlier set, then recount support
    inl_pts = points[best_inliers]
    centroid = inl_pts.mean(axis=0)
    centered = inl_pts - centroid
    _, vecs = np.linalg.eigh(centered.T @ centered)
    plane = HessePlane.from_normal_point(vecs[:, 0], centroid)
    inl = np.abs(plane.signed_distance(points)) < p.inlier_threshold
    if int(inl.sum()) < p.min_inliers:
        return None
    return plane, inl


def extract_srp(points: np.ndarray, rng: np.random.Generator,
                params: SrpParams | None = None) -> list[SrpObservation]:
    """Up to three large, mutually near-orthogonal planes from a sweep.

    Planes are peeled off greedily (largest support first, inliers removed
    after each accept) until most of the cloud is consumed or no plane
    reaches the support floor; the final trio is the largest survivor plus
    the largest candidates near-orthogonal to everything already chosen.
    """
    p = params if params is not None else SrpParams()
    points = np.asarray(points, dtype=float)
    if points.shape[0] < p.min_inliers:
        raise TooFewPoints(
            f"plane extraction needs at least {p.min_inliers} points, "
            f"got {points.shape[0]}"
        )
    total = points.shape[0]
    remaining = points
    candidates: list[tuple[HessePlane, int]] = []
    # The consumption cutoff is deliberately high: in a corridor the three
    # wall planes alone can swallow 90% of a sweep, and stopping there would
    # never surface the floor — the one plane that closes height drift when
    # the loop returns to a story it has seen before.
    while (
        remaining.shape[0] >= p.min_inliers
        and (total - remaining.shape[0]) < p.consume_fraction * total
        and len(candidates) < p.max_candidates
    ):
        found = _ransac_one(remaining, rng, p)
        if found is None:
            break
        plane, inl = found
        candidates.append((plane, int(inl.sum())))
        remaining = remaining[~inl]
    if not candidates:
        raise NoPlanesFound("no plane reached the inlier floor")
    candidates.sort(key=lambda c: -c[1])
    chosen: list[tuple[HessePlane, int]] = []
    for plane, support in candidates:
        if len(chosen) == 3:
            break
        if all(
            abs(float(plane.normal @ prev.normal)) <= p.orth_tol
            for prev, _ in chosen
        ):
            chosen.append((plane, support))
    return [SrpObservation(plane=pl, inliers=s) for pl, s in chosen]


class SrpRegistry:
    """All structural planes added to the graph, keyed by owner keyframe.

    Records keep the plane in the owner's frame; matching transports them
    into a query keyframe through the *current optimized* poses, so the
    registry itself never needs updating when the graph moves.
    """

    def __init__(self, params: SrpParams | None = None):
        self.params = params if params is not None else SrpParams()
        self.records: list[GlobalPlaneRecord] = []

    def observe(
        self,
        keyframe: Keyframe,
        poses: dict[int, Pose],
    ) -> list[SrpMatch]:
        """Match a keyframe's SRPs against the registry; register the rest.

        ``poses`` maps keyframe id to its current world pose (optimized where
        available).  Each SRP matches at most one record — the candidate with
        the smallest normal angle, ties broken by distance then record id —
        and unmatched SRPs become new records owned by this keyframe.
        """
        p = self.params
        pose_i = poses[keyframe.id]
        cos_gate = np.cos(np.radians(p.match_angle_deg))
        matches: list[SrpMatch] = []
        for idx, obs in enumerate(keyframe.srps):
            if abs(obs.plane.distance) <= p.min_abs_d:
                continue
            best: tuple[float, float, int, GlobalPlaneRecord] | None = None
            for rec in self.records:
                owner_pose = poses.get(rec.owner_id)
                if owner_pose is None:
                    continue
                if (
                    np.linalg.norm(pose_i.t - owner_pose.t)
                    > p.registry_radius
                ):
                    continue
                t_i_m = pose_i.inverse().compose(owner_pose)
                pred = transform_plane(t_i_m, rec.plane)
                # Both planes are canonical (d >= 0), so antipodal normals
                # mean genuinely different planes (e.g. the two facing walls
                # of a corridor) — compare signed, not absolute, angle.
                cosang = float(np.clip(obs.plane.normal @ pred.normal, -1, 1))
                dtheta = float(np.arccos(cosang))
                dd = abs(obs.plane.distance - pred.distance)
                if cosang < cos_gate or dd > p.match_distance:
                    continue
                key = (dtheta, dd, rec.plane_id)
                if best is None or key < (best[0], best[1], best[2]):
                    best = (dtheta, dd, rec.plane_id, rec)
            if best is not None:
                matches.append(
                    SrpMatch(
                        keyframe_id=keyframe.id,
                        plane_index=idx,
                        record=best[3],
                        observed=obs.plane,
                        dtheta=best[0],
                        dd=best[1],
                    )
                )
            else:
                self.records.append(
                    GlobalPlaneRecord(
                        plane_id=len(self.records),
                        owner_id=keyframe.id,
                        plane=obs.plane,
                        support=obs.inliers,
                    )
                )
        return matches


__all__ = [
    "GlobalPlaneRecord",
    "Keyframe",
    "SrpMatch",
    "SrpObservation",
    "SrpParams",
    "SrpRegistry",
    "extract_srp",
    "is_keyframe",
]
