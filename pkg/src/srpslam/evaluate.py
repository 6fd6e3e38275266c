"""Trajectory evaluation: loop deviation reports and ground-truth RMSE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from srpslam.errors import DatasetError
from srpslam.geometry import (
    Pose,
    quat_angle,
    quat_conjugate,
    quat_multiply,
    quat_to_ypr,
)


@dataclass
class DeviationReport:
    """Start-to-end drift of a closed loop, in the start pose's frame."""

    dx: float
    dy: float
    dz: float
    dxyz: float
    dyaw: float
    dpitch: float
    droll: float
    dangle: float

    def format(self) -> str:
        return (
            f"dX     {self.dx: .4f} m\n"
            f"dY     {self.dy: .4f} m\n"
            f"dZ     {self.dz: .4f} m\n"
            f"dXYZ   {self.dxyz: .4f} m\n"
            f"dYaw   {self.dyaw: .4f} rad\n"
            f"dPitch {self.dpitch: .4f} rad\n"
            f"dRoll  {self.droll: .4f} rad\n"
            f"dAngle {self.dangle: .4f} rad\n"
        )


def deviation_between(first: Pose, last: Pose) -> DeviationReport:
    """Relative pose first -> last as a deviation report.

    Translation components are expressed in the first pose's frame; the
    rotation is decomposed Z-Y-X into yaw/pitch/roll, and the total angle
    is the axis-angle magnitude of the relative rotation.
    """
    rel = first.inverse().compose(last)
    yaw, pitch, roll = quat_to_ypr(rel.q)
    return DeviationReport(
        dx=float(rel.t[0]),
        dy=float(rel.t[1]),
        dz=float(rel.t[2]),
        dxyz=float(np.linalg.norm(rel.t)),
        dyaw=float(yaw),
        dpitch=float(pitch),
        droll=float(roll),
        dangle=float(quat_angle(rel.q)),
    )


def evaluate_loop_deviation(times: np.ndarray, positions: np.ndarray,
                            quats: np.ndarray) -> DeviationReport:
    """Deviation between the first and last pose of a trajectory that is
    supposed to begin and end at the same place."""
    if len(times) < 2:
        raise DatasetError("trajectory needs at least two poses")
    first = Pose(np.asarray(quats[0], float), np.asarray(positions[0], float))
    last = Pose(np.asarray(quats[-1], float), np.asarray(positions[-1], float))
    return deviation_between(first, last)


def associate(times_a: np.ndarray, times_b: np.ndarray,
              tol: float = 1e-3) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs (ia, ib) of timestamps matching within ``tol``."""
    ib = np.searchsorted(times_b, times_a)
    ib = np.clip(ib, 0, len(times_b) - 1)
    ib_prev = np.maximum(ib - 1, 0)
    use_prev = np.abs(times_b[ib_prev] - times_a) < np.abs(times_b[ib] - times_a)
    ib = np.where(use_prev, ib_prev, ib)
    ok = np.abs(times_b[ib] - times_a) <= tol
    return np.flatnonzero(ok), ib[ok]


def trajectory_errors(
    est_times: np.ndarray,
    est_p: np.ndarray,
    est_q: np.ndarray,
    gt_times: np.ndarray,
    gt_p: np.ndarray,
    gt_q: np.ndarray,
):
    """Per-pose position/orientation errors after first-pose alignment.

    The estimate is rigidly moved so its first matched pose coincides with
    ground truth, which removes the arbitrary choice of start frame without
    hiding any accumulated drift.  Returns (dp Nx3, dang N).
    """
    ia, ib = associate(est_times, gt_times)
    if ia.size == 0:
        raise DatasetError("no matching timestamps between trajectories")
    ep, eq = est_p[ia], est_q[ia]
    gp, gq = gt_p[ib], gt_q[ib]
    t_est0 = Pose(eq[0].astype(float), ep[0].astype(float))
    t_gt0 = Pose(gq[0].astype(float), gp[0].astype(float))
    t_align = t_gt0.compose(t_est0.inverse())
    ep = ep @ t_align.rotation.T + t_align.t
    eq = np.array([quat_multiply(t_align.q, q) for q in eq])
    dp = ep - gp
    dang = np.array(
        [quat_angle(quat_multiply(quat_conjugate(a), b)) for a, b in zip(gq, eq)]
    )
    return dp, dang


def trajectory_rmse(est_times, est_p, est_q, gt_times, gt_p, gt_q):
    """(position RMSE in meters, orientation RMSE in radians)."""
    dp, dang = trajectory_errors(est_times, est_p, est_q, gt_times, gt_p, gt_q)
    rmse_p = float(np.sqrt(np.mean(np.sum(dp * dp, axis=1))))
    rmse_a = float(np.sqrt(np.mean(dang * dang)))
    return rmse_p, rmse_a


__all__ = [
    "DeviationReport",
    "associate",
    "deviation_between",
    "evaluate_loop_deviation",
    "trajectory_errors",
    "trajectory_rmse",
]
