"""Deskew and feature extraction on hand-built scenes with known answers.

The feature scene is a circular ring with a narrow foreground post: the post
boundary is the only legitimate edge, the far-side points next to the range
jump must be suppressed by the occlusion gate, and everything smooth should
surface as planar candidates.
"""

import numpy as np
import pytest

from srpslam.errors import TooFewPoints
from srpslam.geometry import Pose, quat_from_axis_angle, quat_from_ypr, quat_multiply, quat_normalize
from srpslam.scan import (
    FeatureParams,
    Sweep,
    deskew,
    deskew_with_states,
    downsample,
    estimate_normals,
    extract_features,
)


# ---------------------------------------------------------------------------
# deskew
# ---------------------------------------------------------------------------

def _uniform_sweep(points, t_start=0.0, t_end=0.1):
    n = points.shape[0]
    times = np.linspace(t_start, t_end, n)
    return Sweep(0, t_start, t_end, times, np.asarray(points, float),
                 np.zeros(n, dtype=np.int64))


def test_deskew_identity_is_noop():
    rng = np.random.default_rng(31)
    pts = rng.uniform(-5.0, 5.0, (50, 3))
    sweep = _uniform_sweep(pts)
    out = deskew(sweep, Pose.identity())
    assert np.allclose(out, pts, atol=1e-12)


def test_deskew_translation_scales_with_capture_fraction():
    pts = np.tile([1.0, 2.0, 0.5], (11, 1))
    sweep = _uniform_sweep(pts)
    shift = np.array([0.4, -0.2, 0.1])
    out = deskew(sweep, Pose(np.array([0.0, 0.0, 0.0, 1.0]), shift))
    # first point carries the whole start-in-end offset, last point none
    fractions = 1.0 - np.linspace(0.0, 1.0, 11)
    expected = pts + fractions[:, None] * shift
    assert np.allclose(out, expected, atol=1e-12)


def test_deskew_rotation_interpolates_geodesically():
    angle = 0.3
    q = quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), angle)
    pts = np.tile([2.0, 0.0, 0.0], (11, 1))
    sweep = _uniform_sweep(pts)
    out = deskew(sweep, Pose(q, np.zeros(3)))
    fractions = 1.0 - np.linspace(0.0, 1.0, 11)
    for k in range(11):
        a = fractions[k] * angle
        expected = 2.0 * np.array([np.cos(a), np.sin(a), 0.0])
        assert np.allclose(out[k], expected, atol=1e-12)


def test_deskew_with_states_matches_constant_twist_oracle():
    # constant linear velocity + constant yaw rate: interpolating between any
    # two sampled states reproduces the true pose exactly
    rng = np.random.default_rng(32)
    v = np.array([1.2, -0.3, 0.15])
    yaw_rate = 0.8

    def pose_at(t):
        return Pose(quat_from_ypr(yaw_rate * t, 0.0, 0.0), v * t)

    n = 40
    times = np.sort(rng.uniform(0.0, 0.1, n))
    times[0], times[-1] = 0.0, 0.1
    pts_sensor = rng.uniform(-4.0, 4.0, (n, 3))
    sweep = Sweep(0, 0.0, 0.1, times, pts_sensor, np.zeros(n, dtype=np.int64))

    state_times = np.linspace(-0.005, 0.105, 23)
    positions = np.array([pose_at(t).t for t in state_times])
    quats = np.array([pose_at(t).q for t in state_times])
    end_pose = pose_at(0.1)

    out = deskew_with_states(sweep, state_times, positions, quats, end_pose)
    inv_end = end_pose.inverse()
    for k in range(n):
        expected = inv_end.compose(pose_at(times[k])).apply(pts_sensor[k])
        assert np.allclose(out[k], expected, atol=1e-9)


# ---------------------------------------------------------------------------
# feature extraction
# ---------------------------------------------------------------------------

def _post_scene(n=360, r_far=4.0, r_post=1.5, post_start=0.2, post_len=20):
    """Ring on a circle with a foreground post; returns (sweep arrays, info)."""
    az = -np.pi + 2.0 * np.pi * np.arange(n) / n
    daz = 2.0 * np.pi / n
    r = np.full(n, r_far)
    k0 = int(np.round((post_start + np.pi) / daz))
    post = slice(k0, k0 + post_len)
    r[post] = r_post
    pts = np.stack([r * np.cos(az), r * np.sin(az), np.zeros(n)], axis=1)
    rings = np.zeros(n, dtype=np.int64)
    info = {
        "az": az,
        "r": r,
        "daz": daz,
        "first": k0,            # first post index (near side of the jump)
        "last": k0 + post_len - 1,
    }
    return pts, rings, info


def test_post_boundaries_become_edges():
    pts, rings, info = _post_scene()
    feats = extract_features(pts, rings)
    n_edge, n_planar = feats.counts
    assert n_edge >= 1
    assert n_planar >= 20
    # every edge point sits on the post (short range), at one of its ends
    ends = pts[[info["first"], info["last"]]]
    for e in feats.edge:
        assert np.linalg.norm(e) < 2.0
        assert min(np.linalg.norm(ends - e, axis=1)) < 3 * info["daz"] * 4.0


def test_occlusion_gate_masks_far_side_of_jump():
    pts, rings, info = _post_scene()
    feats = extract_features(pts, rings)
    params = FeatureParams()
    # far-circle points within the suppression window of either jump must not
    # be selected at all (their curvature is huge but they are shadow edges)
    h = params.suppression
    banned = set(range(info["first"] - h - 1, info["first"])) | set(
        range(info["last"] + 1, info["last"] + h + 2)
    )
    banned_pts = pts[sorted(banned)]
    for cloud in (feats.edge, feats.planar):
        for p in cloud:
            assert min(np.linalg.norm(banned_pts - p, axis=1)) > 1e-9


def test_sector_caps_bound_edge_count():
    pts, rings, info = _post_scene()
    params = FeatureParams()
    feats = extract_features(pts, rings, params)
    assert feats.edge.shape[0] <= params.sectors * params.max_edge_per_sector
    assert feats.planar.shape[0] <= params.sectors * params.max_planar_per_sector


def test_rings_are_independent():
    pts, rings, _ = _post_scene()
    two_pts = np.vstack([pts, pts + np.array([0.0, 0.0, 0.5])])
    two_rings = np.concatenate([rings, np.ones_like(rings)])
    single = extract_features(pts, rings)
    double = extract_features(two_pts, two_rings)
    assert double.edge.shape[0] == 2 * single.edge.shape[0]
    assert double.planar.shape[0] == 2 * single.planar.shape[0]


def test_too_few_points_raises():
    with pytest.raises(TooFewPoints):
        extract_features(np.zeros((4, 3)), np.zeros(4, dtype=np.int64))


# ---------------------------------------------------------------------------
# downsample / normals
# ---------------------------------------------------------------------------

def _downsample_oracle(points, voxel):
    cells = {}
    for p in points:
        key = tuple(np.floor(p / voxel).astype(int))
        cells.setdefault(key, []).append(p)
    return np.array([np.mean(v, axis=0) for v in cells.values()])


def test_downsample_matches_dict_oracle():
    rng = np.random.default_rng(33)
    pts = rng.uniform(-2.0, 2.0, (500, 3))
    got = downsample(pts, 0.25)
    want = _downsample_oracle(pts, 0.25)
    assert got.shape == want.shape
    got_sorted = got[np.lexsort(got.T)]
    want_sorted = want[np.lexsort(want.T)]
    assert np.allclose(got_sorted, want_sorted, atol=1e-9)


def test_downsample_keeps_isolated_points():
    pts = np.array([[0.0, 0.0, 0.0], [5.0, 5.0, 5.0]])
    out = downsample(pts, 0.1)
    assert out.shape == (2, 3)


def test_estimate_normals_on_plane():
    xs, ys = np.meshgrid(np.linspace(-1, 1, 21), np.linspace(-1, 1, 21))
    cloud = np.stack([xs.ravel(), ys.ravel(), np.zeros(441)], axis=1)
    queries = cloud[::7]
    normals = estimate_normals(queries, cloud, radius=0.3, k=6)
    filled = np.linalg.norm(normals, axis=1) > 0.5
    assert np.count_nonzero(filled) >= queries.shape[0] * 0.8
    assert np.all(np.abs(normals[filled, 2]) > 0.999)


def test_estimate_normals_rejects_degenerate_line():
    cloud = np.stack([np.linspace(0, 2, 50), np.zeros(50), np.zeros(50)], axis=1)
    queries = cloud[10:12]
    normals = estimate_normals(queries, cloud, radius=0.3, k=6)
    assert np.all(np.linalg.norm(normals, axis=1) < 1e-12)
