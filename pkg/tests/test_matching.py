"""Local map maintenance and scan-to-map correspondence fitting.

Uses regular grids for the map so every fitted plane/line has a known answer,
and checks that the target conventions line up with the residual functions
(sensor-frame points, world-frame geometry).
"""

import numpy as np

from srpslam.geometry import Pose, quat_from_ypr
from srpslam.matching import (
    LocalFeatureMap,
    MatchParams,
    match_edges,
    match_planar,
    normal_class,
)
from srpslam.residuals import point_line_batch, point_plane_batch


def _floor_grid(extent=3.0, step=0.15, z=0.0):
    xs = np.arange(-extent, extent + step / 2, step)
    gx, gy = np.meshgrid(xs, xs)
    return np.stack([gx.ravel(), gy.ravel(), np.full(gx.size, z)], axis=1)


def _wall_grid(x=3.0, extent=2.0, step=0.15):
    ys = np.arange(-extent, extent + step / 2, step)
    zs = np.arange(0.0, 2.0 + step / 2, step)
    gy, gz = np.meshgrid(ys, zs)
    return np.stack([np.full(gy.size, x), gy.ravel(), gz.ravel()], axis=1)


def test_normal_class_labels_dominant_axis():
    normals = np.array([
        [1.0, 0.0, 0.0],
        [-0.9, 0.1, 0.0],
        [0.0, 1.0, 0.1],
        [0.0, 0.0, -1.0],
        [0.0, 0.0, 0.0],      # invalid: zero normal
    ])
    assert normal_class(normals).tolist() == [0, 0, 1, 2, -1]


# ---------------------------------------------------------------------------
# LocalFeatureMap
# ---------------------------------------------------------------------------

def test_map_cells_are_frozen_once_filled():
    m = LocalFeatureMap()
    first = np.array([[0.05, 0.05, 0.05]])
    m.insert(first, np.zeros((0, 3)))
    again = np.array([[0.15, 0.15, 0.15]])  # same 0.2 m edge cell
    m.insert(again, np.zeros((0, 3)))
    assert m.edge.shape[0] == 1
    assert np.allclose(m.edge[0], first[0])


def test_map_keeps_classes_separate_in_shared_cells():
    m = LocalFeatureMap()
    # floor and wall points inside the same 0.4 m voxel cell
    floor_pts = np.array([[0.1, 0.1, 0.0], [0.2, 0.1, 0.0]])
    wall_pts = np.array([[0.1, 0.1, 0.3], [0.1, 0.2, 0.3]])
    floor_n = np.tile([0.0, 0.0, 1.0], (2, 1))
    wall_n = np.tile([1.0, 0.0, 0.0], (2, 1))
    m.insert(np.zeros((0, 3)), floor_pts, planar_normals=floor_n)
    m.insert(np.zeros((0, 3)), wall_pts, planar_normals=wall_n)
    assert m.planar.shape[0] == 2
    assert sorted(m.planar_class.tolist()) == [0, 2]


def test_map_crop_drops_distant_cells():
    params = MatchParams(map_radius=10.0)
    m = LocalFeatureMap(params)
    near = np.array([[1.0, 0.0, 0.0]])
    far = np.array([[50.0, 0.0, 0.0]])
    m.insert(np.vstack([near, far]), np.zeros((0, 3)), center=np.zeros(3))
    assert m.edge.shape[0] == 1
    assert np.allclose(m.edge[0], near[0])


def test_map_discards_planar_points_without_normals():
    m = LocalFeatureMap()
    pts = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
    normals = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0]])
    m.insert(np.zeros((0, 3)), pts, planar_normals=normals)
    assert m.planar.shape[0] == 1


# ---------------------------------------------------------------------------
# plane matching
# ---------------------------------------------------------------------------

def test_match_planar_recovers_floor_plane():
    params = MatchParams()
    map_pts = _floor_grid()
    map_cls = np.full(map_pts.shape[0], 2, dtype=np.int64)
    rng = np.random.default_rng(41)
    query_world = np.stack([
        rng.uniform(-2.0, 2.0, 30), rng.uniform(-2.0, 2.0, 30), np.zeros(30)
    ], axis=1)
    normals = np.tile([0.0, 0.0, 1.0], (30, 1))
    targets = match_planar(map_pts, map_cls, query_world, query_world, normals, params)
    assert targets.points.shape[0] >= 25
    assert np.all(np.abs(targets.normals[:, 2]) > 0.999)
    assert np.max(np.abs(np.abs(targets.ds) - 0.0)) < 1e-9


def test_match_planar_separates_classes_near_junction():
    params = MatchParams()
    floor = _floor_grid()
    wall = _wall_grid()
    map_pts = np.vstack([floor, wall])
    map_cls = np.concatenate([
        np.full(floor.shape[0], 2, dtype=np.int64),
        np.full(wall.shape[0], 0, dtype=np.int64),
    ])
    # queries hugging the wall but lying on the floor, normals pointing up
    query = np.stack([np.full(8, 2.85), np.linspace(-1, 1, 8), np.zeros(8)], axis=1)
    normals = np.tile([0.0, 0.0, 1.0], (8, 1))
    targets = match_planar(map_pts, map_cls, query, query, normals, params)
    assert targets.points.shape[0] >= 6
    # support never straddles into the wall: fits stay exactly horizontal
    assert np.all(np.abs(targets.normals[:, 2]) > 0.999)


def test_match_planar_rejects_disagreeing_query_normal():
    params = MatchParams()
    map_pts = _floor_grid()
    map_cls = np.full(map_pts.shape[0], 2, dtype=np.int64)
    query = np.array([[0.0, 0.0, 0.0]])
    tilted = np.array([[0.0, np.sin(0.4), np.cos(0.4)]])  # ~23 deg off
    targets = match_planar(map_pts, map_cls, query, query, tilted, params)
    assert targets.points.shape[0] == 0


def test_match_planar_rejects_query_off_the_surface():
    params = MatchParams()
    map_pts = _floor_grid()
    map_cls = np.full(map_pts.shape[0], 2, dtype=np.int64)
    query = np.array([[0.0, 0.0, 0.4]])  # 40 cm above the floor
    normals = np.array([[0.0, 0.0, 1.0]])
    targets = match_planar(map_pts, map_cls, query, query, normals, params)
    assert targets.points.shape[0] == 0


def test_match_planar_targets_consistent_with_residual():
    params = MatchParams()
    map_pts = _floor_grid(z=0.5)
    map_cls = np.full(map_pts.shape[0], 2, dtype=np.int64)
    pose = Pose(quat_from_ypr(0.3, 0.02, -0.01), np.array([0.4, -0.2, 0.1]))
    rng = np.random.default_rng(42)
    world = np.stack([
        rng.uniform(-1.5, 1.5, 20), rng.uniform(-1.5, 1.5, 20), np.full(20, 0.5)
    ], axis=1)
    sensor = pose.inverse().apply(world)
    normals = np.tile([0.0, 0.0, 1.0], (20, 1))
    targets = match_planar(map_pts, map_cls, sensor, world, normals, params)
    assert targets.points.shape[0] >= 15
    r, _ = point_plane_batch(pose, targets.points, targets.normals, targets.ds)
    assert np.max(np.abs(r)) < 1e-9


# ---------------------------------------------------------------------------
# edge matching
# ---------------------------------------------------------------------------

def test_match_edges_recovers_vertical_line():
    params = MatchParams()
    line = np.stack([
        np.full(41, 1.0), np.full(41, 0.5), np.linspace(-2.0, 2.0, 41)
    ], axis=1)
    query_world = np.array([
        [1.0, 0.5, 0.3],
        [1.0, 0.5, -1.1],
        [1.0, 0.9, 0.0],   # 40 cm off the line: must be rejected
    ])
    targets = match_edges(line, query_world, query_world, params)
    assert targets.points.shape[0] == 2
    assert np.all(np.abs(targets.directions[:, 2]) > 0.999)
    assert np.allclose(targets.centers[:, :2], [1.0, 0.5], atol=1e-9)


def test_match_edges_targets_consistent_with_residual():
    params = MatchParams()
    line = np.stack([
        np.full(41, -0.5), np.full(41, 2.0), np.linspace(0.0, 4.0, 41)
    ], axis=1)
    pose = Pose(quat_from_ypr(-0.2, 0.0, 0.05), np.array([0.1, 0.3, -0.2]))
    world = np.array([[-0.5, 2.0, 1.1], [-0.5, 2.0, 2.7]])
    sensor = pose.inverse().apply(world)
    targets = match_edges(line, sensor, world, params)
    assert targets.points.shape[0] == 2
    r, _ = point_line_batch(pose, targets.points, targets.centers, targets.directions)
    assert np.max(np.abs(r)) < 1e-9


def test_matchers_return_empty_on_sparse_map():
    params = MatchParams()
    tiny = np.zeros((2, 3))
    out_p = match_planar(tiny, np.zeros(2, dtype=np.int64),
                         np.zeros((3, 3)), np.zeros((3, 3)),
                         np.tile([0.0, 0.0, 1.0], (3, 1)), params)
    assert out_p.points.shape[0] == 0
    out_e = match_edges(tiny, np.zeros((3, 3)), np.zeros((3, 3)), params)
    assert out_e.points.shape[0] == 0
