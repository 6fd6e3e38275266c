"""Tightly coupled LiDAR-inertial sliding-window odometry.

Each arriving sweep is deskewed with the IMU-predicted intra-sweep motion,
reduced to feature points, and appended to a fixed-length window of frames.
The window is solved jointly: preintegrated IMU factors couple consecutive
frame states, scan-to-map point-to-plane and point-to-line factors tie every
frame to the frozen local map, and a single bias variable is shared by the
whole window with a random-walk prior to its previous estimate.  The oldest
frame carries a soft prior on its incoming state rather than a hard gauge,
so the whole window can settle onto the map's absolute reference; on
eviction a frame's features are pushed into the local map at its final pose.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from srpslam import lm
from srpslam.errors import EmptyWindow, SolverDiverged
from srpslam.geometry import (
    Pose,
    quat_conjugate,
    quat_multiply,
    quat_normalize,
    quat_to_rotvec,
)
from srpslam.imu import ImuBias, ImuNoise, ImuStream, NavState, Preintegration
from srpslam.matching import (
    LineTargets,
    LocalFeatureMap,
    MatchParams,
    PlaneTargets,
    match_edges,
    match_planar,
)
from srpslam.residuals import (
    imu_residual,
    imu_sqrt_information,
    point_line_batch,
    point_plane_batch,
)
from srpslam.scan import (
    FeatureParams,
    FeatureSet,
    Sweep,
    deskew,
    deskew_with_states,
    downsample,
    estimate_normals,
    extract_features,
)


@dataclass
class OdometryParams:
    window_size: int = 5
    outer_iterations: int = 2
    use_imu: bool = True
    lidar_sigma: float = 0.02
    huber_delta: float = 0.1
    gauge_sigma_t: float = 0.005
    gauge_sigma_r: float = 5e-4
    gauge_sigma_v: float = 0.002
    cloud_voxel: float = 0.1
    features: FeatureParams = field(default_factory=FeatureParams)
    matching: MatchParams = field(default_factory=MatchParams)
    lm: lm.LMOptions = field(default_factory=lm.LMOptions)
    imu_noise: ImuNoise = field(default_factory=ImuNoise)


@dataclass
class WindowFrame:
    index: int
    t_end: float
    pose: Pose
    vel: np.ndarray
    pre: Preintegration | None
    features: FeatureSet
    cloud: np.ndarray
    raw: np.ndarray | None = None
    planar_normals: np.ndarray | None = None
    sqrt_info: np.ndarray | None = None
    plane_targets: PlaneTargets | None = None
    line_targets: LineTargets | None = None


@dataclass
class OdometryOutput:
    """Per-sweep front-end estimate (current newest window frame)."""

    index: int
    t: float
    pose: Pose
    vel: np.ndarray
    bias: ImuBias
    cloud: np.ndarray
    raw_cloud: np.ndarray
    features: FeatureSet
    n_plane: int
    n_line: int
    converged: bool


class LidarInertialOdometry:
    def __init__(
        self,
        params: OdometryParams,
        imu: ImuStream | None = None,
        initial_bias: ImuBias | None = None,
        initial_pose: Pose | None = None,
    ):
        self.params = params
        self.imu = imu if params.use_imu else None
        self.bias = initial_bias if initial_bias is not None else ImuBias.zero()
        self.initial_pose = initial_pose if initial_pose is not None else Pose.identity()
        self.window: list[WindowFrame] = []
        self.map = LocalFeatureMap(params.matching)
        self._bias_prior = self.bias
        self._bias_prior_t: float | None = None
        self._gauge_ref: tuple[Pose, np.ndarray] | None = None

    # ------------------------------------------------------------------

    def process(self, sweep: Sweep) -> OdometryOutput:
        prev = self.window[-1] if self.window else None
        if self.window:
            # Anchor for the oldest frame's soft prior: captured once per
            # sweep so repeated window solves cannot walk the reference.
            self._gauge_ref = (self.window[0].pose, self.window[0].vel.copy())

        pre = None
        micro = None
        if prev is None:
            pred_pose = self.initial_pose
            pred_vel = np.zeros(3)
        elif self.imu is not None:
            state = NavState(prev.t_end, prev.pose.t, prev.vel, prev.pose.q)
            pre, st_t, st_p, st_q = self.imu.integrate_with_states(
                state, sweep.t_end, self.bias, self.params.imu_noise
            )
            micro = (st_t, st_p, st_q)
            nxt = pre.predict(state)
            pred_pose = Pose(quat_normalize(nxt.q), nxt.p)
            pred_vel = nxt.v
        else:
            rel = self._constant_velocity_step()
            pred_pose = prev.pose.compose(rel)
            dt = sweep.t_end - prev.t_end
            pred_vel = (pred_pose.t - prev.pose.t) / max(dt, 1e-9)

        if micro is not None:
            # IMU-rate motion compensation: only the residual between knots
            # is approximated, not the full sweep span.
            pts = deskew_with_states(sweep, micro[0], micro[1], micro[2], pred_pose)
        else:
            start_in_end = (
                Pose.identity() if prev is None
                else pred_pose.inverse().compose(prev.pose)
            )
            pts = deskew(sweep, start_in_end)
        features, cloud, normals = self._build_features(pts, sweep.rings)

        frame = WindowFrame(
            index=sweep.index,
            t_end=sweep.t_end,
            pose=pred_pose,
            vel=pred_vel,
            pre=pre,
            features=features,
            cloud=cloud,
            raw=pts,
            planar_normals=normals,
        )
        if pre is not None:
            frame.sqrt_info = imu_sqrt_information(
                pre, self.params.imu_noise.accel_walk, self.params.imu_noise.gyro_walk
            )
        self.window.append(frame)

        if prev is None:
            # bootstrap the map with the first frame
            self._insert_into_map(frame)
            self._bias_prior = self.bias
            self._bias_prior_t = frame.t_end
            return self._output(frame, True)

        converged = True
        for _ in range(self.params.outer_iterations):
            self._associate()
            converged = self._optimize_window()

        if micro is not None:
            # iterated deskew: rebuild the intra-sweep motion from the solved
            # window state.  The first deskew used a velocity estimate that had
            # never seen this sweep; the residual shear it leaves behind would
            # otherwise be frozen into the map at eviction and pull every later
            # pose toward it.
            prev = self.window[-2]
            state = NavState(prev.t_end, prev.pose.t, prev.vel, prev.pose.q)
            _, st_t, st_p, st_q = self.imu.integrate_with_states(
                state, sweep.t_end, self.bias, self.params.imu_noise
            )
            end = Pose(quat_normalize(st_q[-1]), st_p[-1])
            pts = deskew_with_states(sweep, st_t, st_p, st_q, end)
            frame.features, frame.cloud, frame.planar_normals = (
                self._build_features(pts, sweep.rings)
            )
            frame.raw = pts
            self._associate()
            converged = self._optimize_window()

        if len(self.window) > self.params.window_size:
            evicted = self.window.pop(0)
            self._insert_into_map(evicted)
            self._bias_prior = self.bias
            self._bias_prior_t = evicted.t_end

        newest = self.window[-1]
        return self._output(newest, converged)

    # ------------------------------------------------------------------

    def _output(self, frame: WindowFrame, converged: bool) -> OdometryOutput:
        n_plane = 0 if frame.plane_targets is None else frame.plane_targets.points.shape[0]
        n_line = 0 if frame.line_targets is None else frame.line_targets.points.shape[0]
        return OdometryOutput(
            index=frame.index,
            t=frame.t_end,
            pose=frame.pose,
            vel=frame.vel.copy(),
            bias=self.bias,
            cloud=frame.cloud,
            raw_cloud=frame.raw if frame.raw is not None else frame.cloud,
            features=frame.features,
            n_plane=n_plane,
            n_line=n_line,
            converged=converged,
        )

    def _build_features(
        self, pts: np.ndarray, rings: np.ndarray
    ) -> tuple[FeatureSet, np.ndarray, np.ndarray]:
        features = extract_features(pts, rings, self.params.features)
        cloud = downsample(pts, self.params.cloud_voxel)
        normals = estimate_normals(features.planar, cloud)
        return features, cloud, normals

    def _constant_velocity_step(self) -> Pose:
        if len(self.window) < 2:
            return Pose.identity()
        a, b = self.window[-2], self.window[-1]
        return a.pose.inverse().compose(b.pose)

    def _insert_into_map(self, frame: WindowFrame) -> None:
        edge_w = frame.pose.apply(frame.features.edge) if frame.features.edge.size else np.zeros((0, 3))
        planar_w = frame.pose.apply(frame.features.planar) if frame.features.planar.size else np.zeros((0, 3))
        normals_w = None
        if frame.planar_normals is not None and frame.planar_normals.size:
            normals_w = frame.planar_normals @ frame.pose.rotation.T
        self.map.insert(edge_w, planar_w, center=frame.pose.t,
                        planar_normals=normals_w)

    def _associate(self) -> None:
        for frame in self.window:
            fp = frame.features.planar
            fe = frame.features.edge
            nw = np.zeros((fp.shape[0], 3))
            if frame.planar_normals is not None and fp.size:
                nw = frame.planar_normals @ frame.pose.rotation.T
            frame.plane_targets = match_planar(
                self.map.planar, self.map.planar_class, fp,
                frame.pose.apply(fp) if fp.size else fp, nw,
                self.params.matching,
            )
            frame.line_targets = match_edges(
                self.map.edge, fe, frame.pose.apply(fe) if fe.size else fe,
                self.params.matching,
            )

    # ------------------------------------------------------------------
    # window solve
    # ------------------------------------------------------------------

    def _optimize_window(self) -> bool:
        if not self.window:
            raise EmptyWindow("no frames to optimize")
        if len(self.window) < 2:
            return True
        m = len(self.window) - 1
        use_imu = self.imu is not None
        per = 9 if use_imu else 6
        dim = per * (m + 1) + (6 if use_imu else 0)

        x0 = {
            "poses": [f.pose for f in self.window],
            "vels": [f.vel.copy() for f in self.window],
            "bias": self.bias,
        }

        def retract(x, dx):
            poses = []
            vels = []
            for k in range(m + 1):
                off = per * k
                poses.append(x["poses"][k].retract(dx[off : off + 3], dx[off + 3 : off + 6]))
                if use_imu:
                    vels.append(x["vels"][k] + dx[off + 6 : off + 9])
                else:
                    vels.append(x["vels"][k].copy())
            if use_imu:
                bv = x["bias"].as_vector() + dx[per * (m + 1) : per * (m + 1) + 6]
                bias = ImuBias.from_vector(bv)
            else:
                bias = x["bias"]
            return {"poses": poses, "vels": vels, "bias": bias}

        evaluate = self._make_evaluator(m, use_imu, per, dim)
        result = lm.solve(x0, evaluate, retract, self.params.lm)

        sol = result.x
        for k, frame in enumerate(self.window):
            frame.pose = sol["poses"][k]
            frame.vel = sol["vels"][k]
        self.bias = sol["bias"]
        if not np.all(np.isfinite(self.window[-1].pose.t)):
            raise SolverDiverged("window pose became non-finite")
        return result.converged

    def _make_evaluator(self, m: int, use_imu: bool, per: int, dim: int):
        frames = self.window
        p = self.params
        inv_sig2 = 1.0 / (p.lidar_sigma * p.lidar_sigma)
        # Soft prior pinning the oldest frame near its incoming estimate: the
        # map supplies the absolute reference, so the window must be allowed
        # to slide as a whole onto it instead of inheriting the oldest
        # frame's accumulated error through a hard gauge.
        if self._gauge_ref is not None:
            prior_pose, prior_vel = self._gauge_ref
        else:
            prior_pose, prior_vel = frames[0].pose, frames[0].vel.copy()
        w_gt = 1.0 / (p.gauge_sigma_t * p.gauge_sigma_t)
        w_gr = 1.0 / (p.gauge_sigma_r * p.gauge_sigma_r)
        w_gv = 1.0 / (p.gauge_sigma_v * p.gauge_sigma_v)

        def evaluate(x):
            poses = x["poses"]
            vels = x["vels"]
            bias = x["bias"]
            h = np.zeros((dim, dim))
            g = np.zeros(dim)
            cost = 0.0

            r_t = poses[0].t - prior_pose.t
            dq = quat_multiply(quat_conjugate(prior_pose.q), poses[0].q)
            r_r = quat_to_rotvec(dq)
            cost += w_gt * float(r_t @ r_t) + w_gr * float(r_r @ r_r)
            g[0:3] += w_gt * r_t
            g[3:6] += w_gr * r_r
            h[0:3, 0:3] += w_gt * np.eye(3)
            h[3:6, 3:6] += w_gr * np.eye(3)
            if use_imu:
                r_v = vels[0] - prior_vel
                cost += w_gv * float(r_v @ r_v)
                g[6:9] += w_gv * r_v
                h[6:9, 6:9] += w_gv * np.eye(3)

            if use_imu:
                for k in range(1, m + 1):
                    frame = frames[k]
                    if frame.pre is None:
                        continue
                    si = NavState(frames[k - 1].t_end, poses[k - 1].t, vels[k - 1], poses[k - 1].q)
                    sj = NavState(frame.t_end, poses[k].t, vels[k], poses[k].q)
                    r, j_i, j_j = imu_residual(frame.pre, si, sj, bias, bias)
                    a = frame.sqrt_info
                    wr = a @ r
                    wj_i = a @ j_i
                    wj_j = a @ j_j
                    cost += float(wr @ wr)
                    j_bias = wj_i[:, 9:15] + wj_j[:, 9:15]
                    blocks: list[tuple[int, np.ndarray]] = [
                        (per * (k - 1), wj_i[:, 0:9]),
                        (per * k, wj_j[:, 0:9]),
                        (per * (m + 1), j_bias),
                    ]
                    for off_a, ja in blocks:
                        wa = ja.shape[1]
                        g[off_a : off_a + wa] += ja.T @ wr
                        for off_b, jb in blocks:
                            wb = jb.shape[1]
                            h[off_a : off_a + wa, off_b : off_b + wb] += ja.T @ jb

                # random-walk prior anchoring the shared bias
                if self._bias_prior_t is not None:
                    span = max(frames[-1].t_end - self._bias_prior_t, 1e-3)
                    rb = bias.as_vector() - self._bias_prior.as_vector()
                    wdiag = np.concatenate([
                        np.full(3, 1.0 / (p.imu_noise.accel_walk**2 * span + 1e-12)),
                        np.full(3, 1.0 / (p.imu_noise.gyro_walk**2 * span + 1e-12)),
                    ])
                    off = per * (m + 1)
                    cost += float(rb @ (wdiag * rb))
                    g[off : off + 6] += wdiag * rb
                    h[off : off + 6, off : off + 6] += np.diag(wdiag)

            for k in range(m + 1):
                frame = frames[k]
                off = per * k
                for targets, batch in (
                    (frame.plane_targets, "plane"),
                    (frame.line_targets, "line"),
                ):
                    if targets is None or targets.points.shape[0] == 0:
                        continue
                    if batch == "plane":
                        r, j = point_plane_batch(
                            poses[k], targets.points, targets.normals, targets.ds
                        )
                    else:
                        r, j = point_line_batch(
                            poses[k], targets.points, targets.centers, targets.directions
                        )
                    w, rho = lm.huber_weights(r, p.huber_delta)
                    w = w * inv_sig2
                    cost += float(np.sum(rho)) * inv_sig2
                    jw = j * w[:, None]
                    g[off : off + 6] += jw.T @ r
                    h[off : off + 6, off : off + 6] += jw.T @ j
            return cost, h, g

        return evaluate


__all__ = [
    "LidarInertialOdometry",
    "OdometryOutput",
    "OdometryParams",
    "WindowFrame",
]
