"""Flat key=value run configuration.

Every tunable of the simulator, front end, SRP stage, and pose-graph back
end lives under a dotted key with a default.  A config document is plain
text, one ``key = value`` per line, ``#`` comments allowed; unknown keys are
rejected rather than ignored so typos fail loudly.  ``parse(format(c))``
reproduces ``c`` exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from srpslam.errors import ConfigError
from srpslam.graph import GraphParams
from srpslam.imu import ImuNoise
from srpslam.matching import MatchParams
from srpslam.odometry import OdometryParams
from srpslam.scan import FeatureParams
from srpslam.simulator import SimulatorParams
from srpslam.srp import SrpParams

# key -> default; the default's type decides how values are parsed.
DEFAULTS: dict[str, object] = {
    "run.seed": 0,
    # simulator
    "sim.sweep_hz": 10.0,
    "sim.imu_hz": 400.0,
    "sim.n_azimuth": 1800,
    "sim.range_noise": 0.01,
    "sim.accel_noise_density": 1e-2,
    "sim.gyro_noise_density": 1e-3,
    "sim.accel_bias": (0.02, -0.015, 0.01),
    "sim.gyro_bias": (0.0005, -0.0003, 0.0004),
    "sim.accel_bias_walk": 2e-4,
    "sim.gyro_bias_walk": 2e-5,
    # sweep feature extraction
    "features.half_window": 5,
    "features.sectors": 6,
    "features.edge_threshold": 0.1,
    "features.planar_threshold": 0.05,
    "features.max_edge_per_sector": 2,
    "features.max_planar_per_sector": 12,
    "features.suppression": 5,
    "features.suppress_radius": 0.25,
    "features.occlusion_gap": 0.3,
    "features.parallel_ratio": 0.02,
    # scan-to-map association
    "matching.knn_radius": 1.0,
    "matching.knn_k": 5,
    "matching.plane_fit_tol": 0.05,
    "matching.plane_min_spread": 0.05,
    "matching.line_eigen_ratio": 3.0,
    "matching.point_residual_tol": 0.05,
    "matching.normal_agreement_deg": 8.0,
    "matching.support_span": 2.0,
    "matching.edge_voxel": 0.2,
    "matching.planar_voxel": 0.4,
    "matching.map_radius": 40.0,
    # sliding-window odometry
    "odometry.window_size": 5,
    "odometry.outer_iterations": 2,
    "odometry.use_imu": True,
    "odometry.lidar_sigma": 0.02,
    "odometry.huber_delta": 0.1,
    "odometry.gauge_sigma_t": 0.005,
    "odometry.gauge_sigma_r": 5e-4,
    "odometry.gauge_sigma_v": 0.002,
    "odometry.cloud_voxel": 0.1,
    "odometry.accel_density": 1e-2,
    "odometry.gyro_density": 1e-3,
    "odometry.accel_walk": 2e-4,
    "odometry.gyro_walk": 2e-5,
    # structural plane stage
    "srp.keyframe_translation": 1.0,
    "srp.keyframe_attitude_deg": 10.0,
    "srp.inlier_threshold": 0.05,
    "srp.min_inliers": 400,
    "srp.max_iterations": 1000,
    "srp.confidence": 0.99,
    "srp.hypothesis_batch": 128,
    "srp.orth_tol": 0.15,
    "srp.consume_fraction": 0.95,
    "srp.max_candidates": 8,
    "srp.match_angle_deg": 5.0,
    "srp.match_distance": 0.2,
    "srp.registry_radius": 30.0,
    "srp.min_abs_d": 0.05,
    # pose-graph back end
    "graph.odom_sigma_t": 0.05,
    "graph.odom_sigma_r_deg": 0.5,
    "graph.plane_sigma": 0.05,
    "graph.max_iterations": 50,
    "graph.rel_cost_tol": 1e-8,
    # pipeline-level knobs
    "backend.drift_per_m": 0.0,
    "backend.drift_dir": (0.3, 0.0, 1.0),
    "backend.drift_yaw_per_m": 0.0,
    "pipeline.map_voxel": 0.05,
    "pipeline.use_srp": True,
}


def _parse_value(key: str, text: str, default: object) -> object:
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            vals = tuple(float(v) for v in text.replace(",", " ").split())
            if len(vals) != len(default):
                raise ValueError(
                    f"expected {len(default)} values, got {len(vals)}"
                )
            return vals
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from exc
    raise ConfigError(f"unsupported config type for {key}")


def _format_value(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class RunConfig:
    """Immutable-by-convention bag of all run tunables."""

    values: dict[str, object] = field(
        default_factory=lambda: dict(DEFAULTS)
    )

    def __getitem__(self, key: str) -> object:
        try:
            return self.values[key]
        except KeyError:
            raise ConfigError(f"unknown config key: {key}") from None

    def updated(self, **overrides: object) -> "RunConfig":
        """New config with dotted keys overridden (dots written as '__')."""
        out = dict(self.values)
        for name, value in overrides.items():
            key = name.replace("__", ".")
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key: {key}")
            out[key] = value
        return RunConfig(values=out)

    def with_values(self, pairs: dict[str, object]) -> "RunConfig":
        out = dict(self.values)
        for key, value in pairs.items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key: {key}")
            out[key] = value
        return RunConfig(values=out)

    # -- parameter-object views ---------------------------------------

    def simulator_params(self) -> SimulatorParams:
        v = self.values
        return SimulatorParams(
            sweep_hz=v["sim.sweep_hz"],
            imu_hz=v["sim.imu_hz"],
            n_azimuth=v["sim.n_azimuth"],
            range_noise=v["sim.range_noise"],
            accel_noise_density=v["sim.accel_noise_density"],
            gyro_noise_density=v["sim.gyro_noise_density"],
            accel_bias=v["sim.accel_bias"],
            gyro_bias=v["sim.gyro_bias"],
            accel_bias_walk=v["sim.accel_bias_walk"],
            gyro_bias_walk=v["sim.gyro_bias_walk"],
        )

    def feature_params(self) -> FeatureParams:
        v = self.values
        return FeatureParams(
            half_window=v["features.half_window"],
            sectors=v["features.sectors"],
            edge_threshold=v["features.edge_threshold"],
            planar_threshold=v["features.planar_threshold"],
            max_edge_per_sector=v["features.max_edge_per_sector"],
            max_planar_per_sector=v["features.max_planar_per_sector"],
            suppression=v["features.suppression"],
            suppress_radius=v["features.suppress_radius"],
            occlusion_gap=v["features.occlusion_gap"],
            parallel_ratio=v["features.parallel_ratio"],
        )

    def match_params(self) -> MatchParams:
        v = self.values
        return MatchParams(
            knn_radius=v["matching.knn_radius"],
            knn_k=v["matching.knn_k"],
            plane_fit_tol=v["matching.plane_fit_tol"],
            plane_min_spread=v["matching.plane_min_spread"],
            line_eigen_ratio=v["matching.line_eigen_ratio"],
            point_residual_tol=v["matching.point_residual_tol"],
            normal_agreement_deg=v["matching.normal_agreement_deg"],
            support_span=v["matching.support_span"],
            edge_voxel=v["matching.edge_voxel"],
            planar_voxel=v["matching.planar_voxel"],
            map_radius=v["matching.map_radius"],
        )

    def odometry_params(self, use_imu: bool | None = None) -> OdometryParams:
        v = self.values
        return OdometryParams(
            window_size=v["odometry.window_size"],
            outer_iterations=v["odometry.outer_iterations"],
            use_imu=v["odometry.use_imu"] if use_imu is None else use_imu,
            lidar_sigma=v["odometry.lidar_sigma"],
            huber_delta=v["odometry.huber_delta"],
            gauge_sigma_t=v["odometry.gauge_sigma_t"],
            gauge_sigma_r=v["odometry.gauge_sigma_r"],
            gauge_sigma_v=v["odometry.gauge_sigma_v"],
            cloud_voxel=v["odometry.cloud_voxel"],
            features=self.feature_params(),
            matching=self.match_params(),
            imu_noise=ImuNoise(
                accel_density=v["odometry.accel_density"],
                gyro_density=v["odometry.gyro_density"],
                accel_walk=v["odometry.accel_walk"],
                gyro_walk=v["odometry.gyro_walk"],
            ),
        )

    def srp_params(self) -> SrpParams:
        v = self.values
        return SrpParams(
            keyframe_translation=v["srp.keyframe_translation"],
            keyframe_attitude_deg=v["srp.keyframe_attitude_deg"],
            inlier_threshold=v["srp.inlier_threshold"],
            min_inliers=v["srp.min_inliers"],
            max_iterations=v["srp.max_iterations"],
            confidence=v["srp.confidence"],
            hypothesis_batch=v["srp.hypothesis_batch"],
            orth_tol=v["srp.orth_tol"],
            consume_fraction=v["srp.consume_fraction"],
            max_candidates=v["srp.max_candidates"],
            match_angle_deg=v["srp.match_angle_deg"],
            match_distance=v["srp.match_distance"],
            registry_radius=v["srp.registry_radius"],
            min_abs_d=v["srp.min_abs_d"],
        )

    def graph_params(self) -> GraphParams:
        v = self.values
        return GraphParams(
            odom_sigma_t=v["graph.odom_sigma_t"],
            odom_sigma_r=float(np.radians(v["graph.odom_sigma_r_deg"])),
            plane_sigma=v["graph.plane_sigma"],
            max_iterations=v["graph.max_iterations"],
            rel_cost_tol=v["graph.rel_cost_tol"],
        )

    # -- text form ----------------------------------------------------

    def format(self) -> str:
        lines = [
            f"{key} = {_format_value(self.values[key])}" for key in DEFAULTS
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        values = dict(DEFAULTS)
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value")
            key, _, rhs = line.partition("=")
            key = key.strip()
            if key not in DEFAULTS:
                raise ConfigError(f"line {lineno}: unknown config key: {key}")
            values[key] = _parse_value(key, rhs, DEFAULTS[key])
        return cls(values=values)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        return cls.parse(text)


__all__ = ["DEFAULTS", "RunConfig"]
