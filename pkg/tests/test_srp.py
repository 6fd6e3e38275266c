"""Keyframe promotion, structural-plane extraction, and the plane registry.

The registry tests pin down the transport convention: a record lives in its
owner keyframe's frame, and matching transports it into the query keyframe
through the current world poses, canonical Hesse form throughout.  That is
what makes one physical slab match from both of its faces across stories.
"""

import numpy as np
import pytest

from srpslam.errors import NoPlanesFound, TooFewPoints
from srpslam.geometry import HessePlane, Pose, quat_from_ypr, quat_identity
from srpslam.srp import (
    GlobalPlaneRecord,
    Keyframe,
    SrpObservation,
    SrpParams,
    SrpRegistry,
    extract_srp,
    is_keyframe,
)


# ---------------------------------------------------------------------------
# keyframe rule
# ---------------------------------------------------------------------------

def test_keyframe_on_translation():
    last = Pose.identity()
    assert is_keyframe(Pose(quat_identity(), np.array([1.2, 0.0, 0.0])), last)
    assert not is_keyframe(Pose(quat_identity(), np.array([0.5, 0.0, 0.0])), last)


def test_keyframe_ignores_yaw_but_not_tilt():
    last = Pose.identity()
    yaw_only = Pose.from_ypr(np.radians(30.0), 0.0, 0.0)
    assert not is_keyframe(yaw_only, last)
    pitched = Pose.from_ypr(0.0, np.radians(12.0), 0.0)
    assert is_keyframe(pitched, last)
    rolled = Pose.from_ypr(0.0, 0.0, np.radians(-12.0))
    assert is_keyframe(rolled, last)


def test_keyframe_rule_is_relative_to_last_keyframe():
    last = Pose(quat_identity(), np.array([10.0, 5.0, 0.0]))
    near = Pose(quat_identity(), np.array([10.3, 5.0, 0.0]))
    far = Pose(quat_identity(), np.array([11.5, 5.0, 0.0]))
    assert not is_keyframe(near, last)
    assert is_keyframe(far, last)


# ---------------------------------------------------------------------------
# plane extraction
# ---------------------------------------------------------------------------

def test_room_extraction_finds_three_orthogonal_planes(room_cloud):
    rng = np.random.default_rng(5)
    obs = extract_srp(room_cloud, rng)
    assert len(obs) == 3
    axes = np.eye(3)
    for o in obs:
        assert o.inliers >= 400
        align = np.max(np.abs(axes @ o.plane.normal))
        assert np.degrees(np.arccos(min(align, 1.0))) < 2.0
    for i in range(3):
        for j in range(i + 1, 3):
            dot = abs(float(obs[i].plane.normal @ obs[j].plane.normal))
            assert dot <= 0.15


def test_extraction_is_deterministic_under_seed(room_cloud):
    a = extract_srp(room_cloud, np.random.default_rng(9))
    b = extract_srp(room_cloud, np.random.default_rng(9))
    assert len(a) == len(b)
    for oa, ob in zip(a, b):
        assert np.array_equal(oa.plane.normal, ob.plane.normal)
        assert oa.plane.distance == ob.plane.distance
        assert oa.inliers == ob.inliers


def test_extraction_skips_parallel_duplicates():
    rng = np.random.default_rng(61)
    floor = np.stack([
        rng.uniform(0, 6, 2000), rng.uniform(0, 6, 2000), np.zeros(2000)
    ], axis=1)
    ceiling = np.stack([
        rng.uniform(0, 6, 1600), rng.uniform(0, 6, 1600), np.full(1600, 2.5)
    ], axis=1)
    wall = np.stack([
        np.zeros(900), rng.uniform(0, 6, 900), rng.uniform(0, 2.5, 900)
    ], axis=1)
    cloud = np.vstack([floor, ceiling, wall]) - np.array([3.0, 3.0, 1.2])
    cloud += 0.004 * rng.standard_normal(cloud.shape)
    obs = extract_srp(cloud, np.random.default_rng(62))
    normals = [o.plane.normal for o in obs]
    assert 2 <= len(obs) <= 3
    for i in range(len(obs)):
        for j in range(i + 1, len(obs)):
            assert abs(float(normals[i] @ normals[j])) <= 0.15
    # the trio keeps the floor (largest) and the wall, not the parallel ceiling
    assert any(abs(n[2]) > 0.99 for n in normals)
    assert any(abs(n[0]) > 0.99 for n in normals)


def test_extraction_error_paths():
    rng = np.random.default_rng(63)
    with pytest.raises(TooFewPoints):
        extract_srp(rng.uniform(0, 1, (300, 3)), rng)
    scatter = rng.uniform(0.0, 5.0, (900, 3))  # volumetric: no plane support
    with pytest.raises(NoPlanesFound):
        extract_srp(scatter, rng)


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

def _kf(kid, pose, planes):
    return Keyframe(
        id=kid, pose=pose, sweep_index=kid,
        srps=[SrpObservation(plane=p, inliers=500) for p in planes],
    )


def test_registry_seeds_then_matches_transported_record():
    reg = SrpRegistry()
    floor0 = HessePlane.make([0.0, 0.0, -1.0], -1.5)  # sensor 1.5 m above floor
    poses = {0: Pose.identity()}
    matches = reg.observe(_kf(0, poses[0], [floor0]), poses)
    assert matches == [] and len(reg.records) == 1

    # second keyframe translated and yawed; same physical floor
    pose1 = Pose(quat_from_ypr(0.7, 0.0, 0.0), np.array([4.0, 1.0, 0.0]))
    poses[1] = pose1
    obs1 = HessePlane.make([0.0, 0.0, -1.0], -1.5)
    matches = reg.observe(_kf(1, pose1, [obs1]), poses)
    assert len(matches) == 1
    assert matches[0].record.owner_id == 0
    assert matches[0].dtheta < 1e-9 and matches[0].dd < 1e-9
    assert len(reg.records) == 1   # matched, not re-registered


def test_registry_matches_slab_seen_from_both_sides():
    # ceiling surface at z = 2.4 registered from below; a keyframe one story
    # up sees the same surface 0.6 m beneath itself as its "floor"
    reg = SrpRegistry()
    poses = {0: Pose.identity()}
    ceiling = HessePlane.make([0.0, 0.0, 1.0], 2.4)
    reg.observe(_kf(0, poses[0], [ceiling]), poses)
    assert len(reg.records) == 1

    pose_up = Pose(quat_identity(), np.array([0.0, 0.0, 3.0]))
    poses[1] = pose_up
    seen_below = HessePlane.make([0.0, 0.0, -1.0], -0.6)
    matches = reg.observe(_kf(1, pose_up, [seen_below]), poses)
    assert len(matches) == 1
    assert matches[0].record.owner_id == 0
    assert matches[0].dtheta < 1e-9 and matches[0].dd < 1e-9


def test_registry_keeps_facing_walls_apart():
    # two corridor walls have antipodal canonical normals at the same
    # distance; signed matching must treat them as distinct planes
    reg = SrpRegistry()
    poses = {0: Pose.identity()}
    left = HessePlane.make([0.0, 1.0, 0.0], 2.0)
    reg.observe(_kf(0, poses[0], [left]), poses)
    poses[1] = Pose.identity()
    right = HessePlane.make([0.0, -1.0, 0.0], 2.0)
    matches = reg.observe(_kf(1, poses[1], [right]), poses)
    assert matches == []
    assert len(reg.records) == 2


def test_registry_locality_gate():
    reg = SrpRegistry(SrpParams(registry_radius=30.0))
    poses = {0: Pose.identity()}
    wall = HessePlane.make([1.0, 0.0, 0.0], 3.0)
    reg.observe(_kf(0, poses[0], [wall]), poses)
    far_pose = Pose(quat_identity(), np.array([40.0, 0.0, 0.0]))
    poses[1] = far_pose
    # geometrically the same world plane, re-expressed at the far keyframe
    obs = HessePlane.make([1.0, 0.0, 0.0], -37.0)
    matches = reg.observe(_kf(1, far_pose, [obs]), poses)
    assert matches == []
    assert len(reg.records) == 2


def test_registry_skips_near_origin_planes():
    reg = SrpRegistry()
    poses = {0: Pose.identity()}
    grazing = HessePlane.make([1.0, 0.0, 0.0], 0.01)  # slices the sensor
    matches = reg.observe(_kf(0, poses[0], [grazing]), poses)
    assert matches == []
    assert reg.records == []


def test_registry_prefers_smallest_normal_angle():
    reg = SrpRegistry()
    poses = {0: Pose.identity()}
    exact = HessePlane.make([0.0, 0.0, 1.0], 2.0)
    tilted = HessePlane.make([0.0, np.sin(0.05), np.cos(0.05)], 2.0)
    reg.observe(_kf(0, poses[0], [exact]), poses)
    reg.records.append(GlobalPlaneRecord(
        plane_id=1, owner_id=0, plane=tilted, support=450,
    ))
    poses[1] = Pose.identity()
    obs = HessePlane.make([0.0, 0.0, 1.0], 2.05)
    matches = reg.observe(_kf(1, poses[1], [obs]), poses)
    assert len(matches) == 1
    assert matches[0].record.plane_id == 0


def test_registry_ignores_records_with_unknown_owner_pose():
    reg = SrpRegistry()
    reg.records.append(GlobalPlaneRecord(
        plane_id=0, owner_id=99,
        plane=HessePlane.make([0.0, 0.0, 1.0], 1.5), support=500,
    ))
    poses = {0: Pose.identity()}
    obs = HessePlane.make([0.0, 0.0, 1.0], 1.5)
    matches = reg.observe(_kf(0, poses[0], [obs]), poses)
    assert matches == []
    assert len(reg.records) == 2
