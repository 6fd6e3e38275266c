"""Synthetic building models, smooth walking trajectories, and sensor
simulation (spinning multi-ring LiDAR plus strapdown IMU).

Buildings are unions of bounded rectangle patches.  Trajectories are chains
of quintic-smoothstep segments: position and Z-Y-X Euler angles both ease in
and out of every segment, so velocity and acceleration are continuous and
exactly zero at segment boundaries — the IMU channels follow from the
analytic derivatives, never from numeric differencing.

The world origin sits at the sensor's starting position, which keeps every
structural plane of the bundled scenarios comfortably away from d = 0 in
Hesse form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from srpslam.errors import InvalidSpec
from srpslam.geometry import (
    quat_to_matrix,
    quats_to_matrices,
    ypr_to_quat_batch,
)
from srpslam import kernels

GRAVITY = np.array([0.0, 0.0, -9.81])

LIDAR_RINGS = 16
LIDAR_AZIMUTHS = 1800
LIDAR_SWEEP_HZ = 10.0
LIDAR_MIN_RANGE = 0.3
LIDAR_MAX_RANGE = 80.0
RING_ELEVATIONS = np.deg2rad(np.linspace(-15.0, 15.0, LIDAR_RINGS))
IMU_HZ = 400.0

_RAMP_PITCH = float(np.arctan2(1.0, 2.0))  # 3 m rise over a 6 m run


# ---------------------------------------------------------------------------
# building geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RectPatch:
    """Bounded rectangle: center c, orthonormal in-plane axes u, v, and
    half-extents along each."""

    center: np.ndarray
    u: np.ndarray
    v: np.ndarray
    half_u: float
    half_v: float

    @property
    def normal(self) -> np.ndarray:
        return np.cross(self.u, self.v)


def _rect(center, u, v, half_u, half_v) -> RectPatch:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    u = u / np.linalg.norm(u)
    v = v - np.dot(v, u) * u
    v = v / np.linalg.norm(v)
    return RectPatch(np.asarray(center, dtype=float), u, v, float(half_u), float(half_v))


@dataclass
class BuildingModel:
    name: str
    patches: list[RectPatch] = field(default_factory=list)

    def as_arrays(self):
        """Pack patches into the arrays the ray-cast kernel consumes."""
        if not self.patches:
            raise InvalidSpec(f"building '{self.name}' has no surfaces")
        centers = np.array([p.center for p in self.patches])
        us = np.array([p.u for p in self.patches])
        vs = np.array([p.v for p in self.patches])
        hus = np.array([p.half_u for p in self.patches])
        hvs = np.array([p.half_v for p in self.patches])
        return centers, us, vs, hus, hvs

    def sample_surfaces(self, spacing: float, rng: np.random.Generator,
                        noise: float = 0.0) -> np.ndarray:
        """Quasi-uniform point samples over every patch (test fixtures)."""
        clouds = []
        for p in self.patches:
            nu = max(2, int(round(2.0 * p.half_u / spacing)))
            nv = max(2, int(round(2.0 * p.half_v / spacing)))
            a = np.linspace(-p.half_u, p.half_u, nu)
            b = np.linspace(-p.half_v, p.half_v, nv)
            aa, bb = np.meshgrid(a, b, indexing="ij")
            pts = (
                p.center[None, :]
                + aa.reshape(-1, 1) * p.u[None, :]
                + bb.reshape(-1, 1) * p.v[None, :]
            )
            if noise > 0.0:
                pts = pts + rng.normal(scale=noise, size=pts.shape)
            clouds.append(pts)
        return np.vstack(clouds)


def _add_pilasters(bm: BuildingModel, xs, y_wall: float, z_lo: float, z_hi: float,
                   depth: float = 0.15, width: float = 0.2) -> None:
    """Shallow full-height wall projections that supply edge features."""
    zc = 0.5 * (z_lo + z_hi)
    hz = 0.5 * (z_hi - z_lo)
    s = -1.0 if y_wall > 0 else 1.0  # protrude into the corridor
    y_face = y_wall + s * depth
    for x in xs:
        bm.patches.append(_rect([x, y_face, zc], [1, 0, 0], [0, 0, 1], width / 2, hz))
        for dx in (-width / 2, width / 2):
            bm.patches.append(
                _rect([x + dx, y_wall + s * depth / 2, zc], [0, 1, 0], [0, 0, 1], depth / 2, hz)
            )


def make_corridor() -> BuildingModel:
    """Single-story corridor, 12 m x 2 m x 3 m, sensor start at the origin
    0.6 m above the floor."""
    bm = BuildingModel("corridor-1f")
    z_lo, z_hi = -0.6, 2.4
    zc, hz = 0.9, 1.5
    bm.patches += [
        _rect([5.5, 0, z_lo], [1, 0, 0], [0, 1, 0], 6.0, 1.0),   # floor
        _rect([5.5, 0, z_hi], [1, 0, 0], [0, 1, 0], 6.0, 1.0),   # ceiling
        _rect([5.5, 1.0, zc], [1, 0, 0], [0, 0, 1], 6.0, hz),    # north wall
        _rect([5.5, -1.0, zc], [1, 0, 0], [0, 0, 1], 6.0, hz),   # south wall
        _rect([-0.5, 0, zc], [0, 1, 0], [0, 0, 1], 1.0, hz),     # west end
        _rect([11.5, 0, zc], [0, 1, 0], [0, 0, 1], 1.0, hz),     # east end
    ]
    _add_pilasters(bm, [3.0, 7.0], 1.0, z_lo, z_hi)
    _add_pilasters(bm, [3.0, 7.0], -1.0, z_lo, z_hi)
    return bm


def make_building_3f() -> BuildingModel:
    """Three-story block: corridors at x in [-0.5, 10], an open stair shaft
    at x in [10, 16.5] crossed by two switchback ramps.  The side walls, end
    walls, bottom floor and top ceiling are single full-height planes, so the
    same structural planes are observable from every story."""
    bm = BuildingModel("building-3f")
    z_lo, z_hi = -0.6, 8.4
    zc, hz = 3.9, 4.5
    bm.patches += [
        _rect([8.0, 1.0, zc], [1, 0, 0], [0, 0, 1], 8.5, hz),    # north wall
        _rect([8.0, -1.0, zc], [1, 0, 0], [0, 0, 1], 8.5, hz),   # south wall
        _rect([-0.5, 0, zc], [0, 1, 0], [0, 0, 1], 1.0, hz),     # west end
        _rect([16.5, 0, zc], [0, 1, 0], [0, 0, 1], 1.0, hz),     # east end
        _rect([8.0, 0, z_lo], [1, 0, 0], [0, 1, 0], 8.5, 1.0),   # bottom floor
        _rect([8.0, 0, z_hi], [1, 0, 0], [0, 1, 0], 8.5, 1.0),   # top ceiling
        _rect([4.75, 0, 2.4], [1, 0, 0], [0, 1, 0], 5.25, 1.0),  # story-1 slab
        _rect([4.75, 0, 5.4], [1, 0, 0], [0, 1, 0], 5.25, 1.0),  # story-2 slab
        # switchback ramps spanning the shaft
        _rect([13.0, 0, 0.9], [2, 0, 1], [0, 1, 0], 0.5 * np.sqrt(45.0), 1.0),
        _rect([13.0, 0, 3.9], [-2, 0, 1], [0, 1, 0], 0.5 * np.sqrt(45.0), 1.0),
    ]
    _add_pilasters(bm, [3.0, 7.0], 1.0, z_lo, z_hi)
    _add_pilasters(bm, [3.0, 7.0], -1.0, z_lo, z_hi)
    return bm


def make_room() -> BuildingModel:
    """Closed 4 m x 5 m x 3 m room used by the plane-extraction fixtures."""
    bm = BuildingModel("room")
    bm.patches += [
        _rect([2.0, 2.5, 0.0], [1, 0, 0], [0, 1, 0], 2.0, 2.5),   # floor
        _rect([2.0, 2.5, 3.0], [1, 0, 0], [0, 1, 0], 2.0, 2.5),   # ceiling
        _rect([2.0, 0.0, 1.5], [1, 0, 0], [0, 0, 1], 2.0, 1.5),   # south wall
        _rect([2.0, 5.0, 1.5], [1, 0, 0], [0, 0, 1], 2.0, 1.5),   # north wall
        _rect([0.0, 2.5, 1.5], [0, 1, 0], [0, 0, 1], 2.5, 1.5),   # west wall
        _rect([4.0, 2.5, 1.5], [0, 1, 0], [0, 0, 1], 2.5, 1.5),   # east wall
    ]
    return bm


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

def _smoothstep(sigma: np.ndarray):
    """Quintic ease s plus its first two derivatives w.r.t. sigma."""
    s = sigma * sigma * sigma * (10.0 + sigma * (-15.0 + 6.0 * sigma))
    ds = 30.0 * sigma * sigma * (1.0 + sigma * (-2.0 + sigma))
    dds = 60.0 * sigma * (1.0 + sigma * (-3.0 + 2.0 * sigma))
    return s, ds, dds


class Trajectory:
    """Piecewise quintic-eased pose path; C^2 in position, C^1 in attitude
    rate, with all derivatives analytic."""

    def __init__(self):
        self._t0 = []
        self._dur = []
        self._p0 = []
        self._p1 = []
        self._e0 = []
        self._e1 = []
        self._built = False

    # -- construction ---------------------------------------------------

    def start(self, p, ypr=(0.0, 0.0, 0.0)) -> "Trajectory":
        self._cursor_p = np.asarray(p, dtype=float)
        self._cursor_e = np.asarray(ypr, dtype=float)
        self._cursor_t = 0.0
        return self

    def hold(self, duration: float) -> "Trajectory":
        return self.move_to(self._cursor_p, self._cursor_e, duration)

    def move_to(self, p, ypr, duration: float) -> "Trajectory":
        if duration <= 0.0:
            raise InvalidSpec("segment duration must be positive")
        self._t0.append(self._cursor_t)
        self._dur.append(float(duration))
        self._p0.append(self._cursor_p.copy())
        p = np.asarray(p, dtype=float)
        e = np.asarray(ypr, dtype=float)
        self._p1.append(p.copy())
        self._e0.append(self._cursor_e.copy())
        self._e1.append(e.copy())
        self._cursor_p, self._cursor_e = p, e
        self._cursor_t += float(duration)
        return self

    def turn_to(self, yaw=None, pitch=None, roll=None, duration: float = 1.5) -> "Trajectory":
        e = self._cursor_e.copy()
        if yaw is not None:
            e[0] = yaw
        if pitch is not None:
            e[1] = pitch
        if roll is not None:
            e[2] = roll
        return self.move_to(self._cursor_p, e, duration)

    def _finish(self):
        if not self._built:
            if not self._t0:
                raise InvalidSpec("trajectory has no segments")
            self.t0 = np.asarray(self._t0)
            self.dur = np.asarray(self._dur)
            self.p0 = np.asarray(self._p0)
            self.dp = np.asarray(self._p1) - self.p0
            self.e0 = np.asarray(self._e0)
            self.de = np.asarray(self._e1) - self.e0
            self.duration = float(self.t0[-1] + self.dur[-1])
            self._built = True

    # -- evaluation -----------------------------------------------------

    def _locate(self, t: np.ndarray):
        self._finish()
        t = np.clip(np.atleast_1d(np.asarray(t, dtype=float)), 0.0, self.duration)
        seg = np.clip(np.searchsorted(self.t0, t, side="right") - 1, 0, len(self.dur) - 1)
        sigma = np.clip((t - self.t0[seg]) / self.dur[seg], 0.0, 1.0)
        return seg, sigma

    def sample(self, t):
        """Pose, velocity, body rates, and body-frame specific force at t.

        Returns a dict of arrays keyed p, q, v, a, omega, ypr (leading
        dimension matches t).
        """
        seg, sigma = self._locate(t)
        s, ds, dds = _smoothstep(sigma)
        inv_d = 1.0 / self.dur[seg]
        p = self.p0[seg] + s[:, None] * self.dp[seg]
        v = (ds * inv_d)[:, None] * self.dp[seg]
        a = (dds * inv_d * inv_d)[:, None] * self.dp[seg]
        e = self.e0[seg] + s[:, None] * self.de[seg]
        e_rate = (ds * inv_d)[:, None] * self.de[seg]

        yaw, pitch, roll = e[:, 0], e[:, 1], e[:, 2]
        q = ypr_to_quat_batch(yaw, pitch, roll)
        # body rates for the Z-Y-X Euler chain
        yd, pd, rd = e_rate[:, 0], e_rate[:, 1], e_rate[:, 2]
        sp, cp = np.sin(pitch), np.cos(pitch)
        sr, cr = np.sin(roll), np.cos(roll)
        omega = np.stack(
            [
                rd - yd * sp,
                pd * cr + yd * cp * sr,
                -pd * sr + yd * cp * cr,
            ],
            axis=-1,
        )
        return {"p": p, "q": q, "v": v, "a": a, "omega": omega, "ypr": e}

    def pose_at(self, t: float):
        out = self.sample(np.array([t]))
        return out["p"][0], out["q"][0]


def corridor_trajectory() -> Trajectory:
    """Out-and-back walk along the corridor with in-place turns."""
    tr = Trajectory().start([0.0, 0.0, 0.0])
    tr.hold(1.5)
    tr.move_to([10.0, 0.0, 0.0], [0.0, 0.0, 0.0], 8.0)
    tr.turn_to(yaw=np.pi, duration=2.0)
    tr.move_to([0.0, 0.0, 0.0], [np.pi, 0.0, 0.0], 8.0)
    tr.turn_to(yaw=0.0, duration=2.0)
    tr.hold(1.5)
    return tr


def building_3f_trajectory() -> Trajectory:
    """Full loop: story-0 corridor, up both ramps, story-2 corridor and back,
    ending exactly at the start pose."""
    rp = _RAMP_PITCH
    tr = Trajectory().start([0.0, 0.0, 0.0])
    tr.hold(1.5)
    tr.move_to([10.0, 0.0, 0.0], [0.0, 0.0, 0.0], 7.0)
    tr.turn_to(pitch=-rp, duration=0.8)
    tr.move_to([16.0, 0.0, 3.0], [0.0, -rp, 0.0], 5.0)        # up ramp A
    tr.turn_to(yaw=np.pi, duration=1.5)
    tr.move_to([10.0, 0.0, 6.0], [np.pi, -rp, 0.0], 5.0)      # up ramp B
    tr.turn_to(pitch=0.0, duration=0.8)
    tr.move_to([1.0, 0.0, 6.0], [np.pi, 0.0, 0.0], 6.5)
    tr.turn_to(yaw=2.0 * np.pi, duration=1.5)
    tr.move_to([10.0, 0.0, 6.0], [2.0 * np.pi, 0.0, 0.0], 6.5)
    tr.turn_to(pitch=rp, duration=0.8)
    tr.move_to([16.0, 0.0, 3.0], [2.0 * np.pi, rp, 0.0], 5.0)  # down ramp B
    tr.turn_to(yaw=3.0 * np.pi, duration=1.5)
    tr.move_to([10.0, 0.0, 0.0], [3.0 * np.pi, rp, 0.0], 5.0)  # down ramp A
    tr.turn_to(pitch=0.0, duration=0.8)
    tr.move_to([0.0, 0.0, 0.0], [3.0 * np.pi, 0.0, 0.0], 7.0)
    tr.turn_to(yaw=4.0 * np.pi, duration=1.5)
    tr.hold(1.5)
    return tr


def stairwell_trajectory() -> Trajectory:
    """Short climb through the shaft only."""
    rp = _RAMP_PITCH
    tr = Trajectory().start([6.0, 0.0, 0.0])
    tr.hold(1.5)
    tr.move_to([10.0, 0.0, 0.0], [0.0, 0.0, 0.0], 3.5)
    tr.turn_to(pitch=-rp, duration=0.8)
    tr.move_to([16.0, 0.0, 3.0], [0.0, -rp, 0.0], 5.0)
    tr.turn_to(yaw=np.pi, duration=1.5)
    tr.move_to([10.0, 0.0, 6.0], [np.pi, -rp, 0.0], 5.0)
    tr.turn_to(pitch=0.0, duration=0.8)
    tr.move_to([7.0, 0.0, 6.0], [np.pi, 0.0, 0.0], 3.0)
    tr.hold(1.5)
    return tr


# ---------------------------------------------------------------------------
# sensor simulation
# ---------------------------------------------------------------------------

@dataclass
class SimulatedSweep:
    """One LiDAR revolution: per-point capture time, sensor-frame
    coordinates at capture time, and ring index."""

    index: int
    t_start: float
    t_end: float
    times: np.ndarray
    points: np.ndarray
    rings: np.ndarray


@dataclass
class SimulatorParams:
    sweep_hz: float = LIDAR_SWEEP_HZ
    imu_hz: float = IMU_HZ
    n_azimuth: int = LIDAR_AZIMUTHS
    range_noise: float = 0.01
    accel_noise_density: float = 1e-2
    gyro_noise_density: float = 1e-3
    accel_bias: tuple = (0.02, -0.015, 0.01)
    gyro_bias: tuple = (0.0005, -0.0003, 0.0004)
    accel_bias_walk: float = 2e-4
    gyro_bias_walk: float = 2e-5


def noise_free(params: SimulatorParams) -> SimulatorParams:
    import dataclasses

    return dataclasses.replace(
        params,
        range_noise=0.0,
        accel_noise_density=0.0,
        gyro_noise_density=0.0,
        accel_bias=(0.0, 0.0, 0.0),
        gyro_bias=(0.0, 0.0, 0.0),
        accel_bias_walk=0.0,
        gyro_bias_walk=0.0,
    )


def simulate_imu(traj: Trajectory, params: SimulatorParams,
                 rng: np.random.Generator):
    """Sampled gyro/accel with bias and white noise; returns (t, gyro, accel)."""
    traj._finish()
    n = int(round(traj.duration * params.imu_hz)) + 1
    t = np.arange(n) / params.imu_hz
    out = traj.sample(t)
    rots = quats_to_matrices(out["q"])
    # specific force in the body frame
    f_world = out["a"] - GRAVITY
    accel = np.einsum("nij,nj->ni", rots.transpose(0, 2, 1), f_world)
    gyro = out["omega"].copy()
    dt = 1.0 / params.imu_hz
    accel += _bias_track(np.asarray(params.accel_bias),
                         params.accel_bias_walk, n, dt, rng)
    gyro += _bias_track(np.asarray(params.gyro_bias),
                        params.gyro_bias_walk, n, dt, rng)
    if params.accel_noise_density > 0.0:
        sd = params.accel_noise_density * np.sqrt(params.imu_hz)
        accel += rng.normal(scale=sd, size=accel.shape)
    if params.gyro_noise_density > 0.0:
        sd = params.gyro_noise_density * np.sqrt(params.imu_hz)
        gyro += rng.normal(scale=sd, size=gyro.shape)
    return t, gyro, accel


def _bias_track(b0: np.ndarray, walk: float, n: int, dt: float,
                rng: np.random.Generator) -> np.ndarray:
    """Slowly wandering bias: initial value plus a random walk."""
    if walk <= 0.0:
        return np.broadcast_to(b0, (n, 3))
    steps = rng.normal(scale=walk * np.sqrt(dt), size=(n, 3))
    steps[0] = 0.0
    return b0 + np.cumsum(steps, axis=0)


def simulate_sweeps(traj: Trajectory, building: BuildingModel,
                    params: SimulatorParams, rng: np.random.Generator):
    """Column-synchronous ray casting of every LiDAR revolution.

    All rays of one azimuth column share a timestamp and sensor pose; points
    are stored in the sensor frame at their capture time (motion-distorted,
    as a real sensor would deliver them).
    """
    traj._finish()
    centers, us, vs, hus, hvs = building.as_arrays()
    sweep_dt = 1.0 / params.sweep_hz
    n_sweeps = int(np.floor(traj.duration / sweep_dt + 1e-9))
    n_az = params.n_azimuth
    col_dt = sweep_dt / n_az

    az = 2.0 * np.pi * np.arange(n_az) / n_az
    cos_e, sin_e = np.cos(RING_ELEVATIONS), np.sin(RING_ELEVATIONS)
    # sensor-frame directions per (column, ring)
    dir_s = np.empty((n_az, LIDAR_RINGS, 3))
    dir_s[:, :, 0] = np.cos(az)[:, None] * cos_e[None, :]
    dir_s[:, :, 1] = np.sin(az)[:, None] * cos_e[None, :]
    dir_s[:, :, 2] = sin_e[None, :]
    rings = np.tile(np.arange(LIDAR_RINGS, dtype=np.int64), n_az)

    sweeps = []
    for k in range(n_sweeps):
        t_start = k * sweep_dt
        t_cols = t_start + np.arange(n_az) * col_dt
        out = traj.sample(t_cols)
        rots = quats_to_matrices(out["q"])
        dir_w = np.einsum("cij,crj->cri", rots, dir_s).reshape(-1, 3)
        orig_w = np.repeat(out["p"], LIDAR_RINGS, axis=0)
        t_hit, _ = kernels.raycast_rects(
            orig_w, dir_w, centers, us, vs, hus, hvs,
            LIDAR_MIN_RANGE, LIDAR_MAX_RANGE,
        )
        hit = np.isfinite(t_hit)
        rng_vals = t_hit[hit]
        if params.range_noise > 0.0:
            rng_vals = rng_vals + rng.normal(scale=params.range_noise, size=rng_vals.shape)
        pts = dir_s.reshape(-1, 3)[hit] * rng_vals[:, None]
        times = np.repeat(t_cols, LIDAR_RINGS)[hit]
        sweeps.append(
            SimulatedSweep(
                index=k,
                t_start=t_start,
                t_end=t_start + sweep_dt,
                times=times,
                points=pts,
                rings=rings[hit],
            )
        )
    return sweeps


SCENARIOS = {
    "corridor-1f": (make_corridor, corridor_trajectory),
    "building-3f-loop": (make_building_3f, building_3f_trajectory),
    "stairwell-only": (make_building_3f, stairwell_trajectory),
}


def get_scenario(name: str):
    try:
        make_building, make_traj = SCENARIOS[name]
    except KeyError:
        raise InvalidSpec(
            f"unknown scenario '{name}'; choose from {sorted(SCENARIOS)}"
        ) from None
    return make_building(), make_traj()


__all__ = [
    "BuildingModel",
    "RectPatch",
    "SCENARIOS",
    "SimulatedSweep",
    "SimulatorParams",
    "Trajectory",
    "building_3f_trajectory",
    "corridor_trajectory",
    "get_scenario",
    "make_building_3f",
    "make_corridor",
    "make_room",
    "noise_free",
    "simulate_imu",
    "simulate_sweeps",
    "stairwell_trajectory",
]
