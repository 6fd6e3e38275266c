"""Residual functions and analytic Jacobians for the sliding-window solver
and the global pose graph.

Perturbation convention for every pose block: translation is additive in the
parent frame and rotation is right-multiplied, ``(p, q) <- (p + δp,
q ⊗ Exp(δθ))``.  All Jacobians below are exact to first order in that chart
and are verified against central differences by the test suite.
"""

from __future__ import annotations

import numpy as np

from srpslam.geometry import (
    HessePlane,
    Pose,
    quat_conjugate,
    quat_multiply,
    quat_to_matrix,
    quat_to_rotvec,
    left_jacobian_inv,
    right_jacobian,
    right_jacobian_inv,
    skew,
)
from srpslam.imu import GRAVITY, ImuBias, NavState, Preintegration

# residual/state block layout used by the 15-dim IMU factor
_P, _TH, _V, _BA, _BG = slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12), slice(12, 15)


# ---------------------------------------------------------------------------
# IMU preintegration factor
# ---------------------------------------------------------------------------

def imu_residual(
    pre: Preintegration,
    state_i: NavState,
    state_j: NavState,
    bias_i: ImuBias,
    bias_j: ImuBias,
    gravity: np.ndarray = GRAVITY,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """15-dim residual between consecutive states, blocks (p, θ, v, ba, bg).

    Returns (r, J_i, J_j) with each Jacobian 15x15 over the same block order
    of the corresponding state's perturbation.
    """
    dt = pre.dt_total
    r_i = quat_to_matrix(state_i.q)
    r_j = quat_to_matrix(state_j.q)

    dba = bias_i.accel - pre.bias_ref.accel
    dbg = bias_i.gyro - pre.bias_ref.gyro
    dp_hat = pre.delta_p + pre.J_p_ba @ dba + pre.J_p_bg @ dbg
    dv_hat = pre.delta_v + pre.J_v_ba @ dba + pre.J_v_bg @ dbg
    corr = pre.J_q_bg @ dbg
    dq_hat = quat_multiply(pre.delta_q, _exp_quat(corr))

    u_p = state_j.p - state_i.p - state_i.v * dt - 0.5 * gravity * dt * dt
    u_v = state_j.v - state_i.v - gravity * dt
    w_p = r_i.T @ u_p
    w_v = r_i.T @ u_v

    r = np.zeros(15)
    r[_P] = w_p - dp_hat
    q_err = quat_multiply(quat_conjugate(dq_hat), quat_multiply(quat_conjugate(state_i.q), state_j.q))
    r_theta = quat_to_rotvec(q_err)
    r[_TH] = r_theta
    r[_V] = w_v - dv_hat
    r[_BA] = bias_j.accel - bias_i.accel
    r[_BG] = bias_j.gyro - bias_i.gyro

    jr_inv = right_jacobian_inv(r_theta)
    r_ji = r_j.T @ r_i

    j_i = np.zeros((15, 15))
    j_i[_P, _P] = -r_i.T
    j_i[_P, _TH] = skew(w_p)
    j_i[_P, _V] = -r_i.T * dt
    j_i[_P, _BA] = -pre.J_p_ba
    j_i[_P, _BG] = -pre.J_p_bg
    j_i[_TH, _TH] = -jr_inv @ r_ji
    j_i[_TH, _BG] = -left_jacobian_inv(r_theta) @ right_jacobian(corr) @ pre.J_q_bg
    j_i[_V, _TH] = skew(w_v)
    j_i[_V, _V] = -r_i.T
    j_i[_V, _BA] = -pre.J_v_ba
    j_i[_V, _BG] = -pre.J_v_bg
    j_i[_BA, _BA] = -np.eye(3)
    j_i[_BG, _BG] = -np.eye(3)

    j_j = np.zeros((15, 15))
    j_j[_P, _P] = r_i.T
    j_j[_TH, _TH] = jr_inv
    j_j[_V, _V] = r_i.T
    j_j[_BA, _BA] = np.eye(3)
    j_j[_BG, _BG] = np.eye(3)
    return r, j_i, j_j


def imu_sqrt_information(
    pre: Preintegration,
    accel_walk: float,
    gyro_walk: float,
) -> np.ndarray:
    """Upper-triangular A with AᵀA = Σ⁻¹ over (p, θ, v, ba, bg)."""
    dt = max(pre.dt_total, 1e-6)
    cov = np.zeros((15, 15))
    perm = np.array([0, 1, 2, 6, 7, 8, 3, 4, 5])  # (p, v, θ) -> (p, θ, v)
    cov[:9, :9] = pre.covariance[np.ix_(perm, perm)]
    cov[9:12, 9:12] = np.eye(3) * (accel_walk**2 * dt)
    cov[12:15, 12:15] = np.eye(3) * (gyro_walk**2 * dt)
    cov[:9, :9] += np.eye(9) * 1e-14  # guard exact zeros for noise-free data
    info = np.linalg.inv(cov)
    info = 0.5 * (info + info.T)
    return np.linalg.cholesky(info).T


def _exp_quat(phi: np.ndarray) -> np.ndarray:
    from srpslam.geometry import quat_from_rotvec

    return quat_from_rotvec(phi)


# ---------------------------------------------------------------------------
# LiDAR point-to-plane / point-to-line (batched over correspondences)
# ---------------------------------------------------------------------------

def point_plane_batch(
    pose: Pose,
    points: np.ndarray,
    normals: np.ndarray,
    ds: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Signed point-to-plane distances of sensor points under a world pose.

    r_k = n_k · (R x_k + p) - d_k.  Returns (r (N,), J (N, 6)) with pose
    blocks (δp, δθ).
    """
    rot = pose.rotation
    x_w = points @ rot.T + pose.t
    r = np.einsum("ij,ij->i", normals, x_w) - ds
    j = np.zeros((points.shape[0], 6))
    j[:, :3] = normals
    # -nᵀ R ⌊x⌋ₓ  ==  (x × Rᵀn)ᵀ  for the right-multiplied rotation update
    j[:, 3:] = np.cross(points, normals @ rot)
    return r, j


def point_line_batch(
    pose: Pose,
    points: np.ndarray,
    centers: np.ndarray,
    directions: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Point-to-line distances r_k = |(R x_k + p - c_k) × l_k|.

    Returns (r (N,), J (N, 6)); rows with the point numerically on the line
    get a zero Jacobian row and zero residual.
    """
    rot = pose.rotation
    x_w = points @ rot.T + pose.t
    v = x_w - centers
    w = np.cross(v, directions)
    r = np.linalg.norm(w, axis=1)
    good = r > 1e-9
    w_hat = np.zeros_like(w)
    w_hat[good] = w[good] / r[good, None]
    # dr/dx_w = (l × ŵ)ᵀ; rotation block mirrors point_plane_batch
    g = np.cross(directions, w_hat)
    j = np.zeros((points.shape[0], 6))
    j[:, :3] = g
    j[:, 3:] = np.cross(points, g @ rot)
    r = np.where(good, r, 0.0)
    return r, j


# ---------------------------------------------------------------------------
# pose-graph edges
# ---------------------------------------------------------------------------

def pose_edge_residual(
    pose_a: Pose,
    pose_b: Pose,
    meas: Pose,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Decoupled relative-pose error, blocks (e_t, e_θ).

    e_t = R_aᵀ (p_b - p_a) - z_p;  e_θ = Log(z_q⁻¹ ⊗ q_a⁻¹ ⊗ q_b).
    Returns (e (6,), J_a (6, 6), J_b (6, 6)).
    """
    r_a = pose_a.rotation
    r_b = pose_b.rotation
    u = r_a.T @ (pose_b.t - pose_a.t)
    e_t = u - meas.t
    q_err = quat_multiply(
        quat_conjugate(meas.q), quat_multiply(quat_conjugate(pose_a.q), pose_b.q)
    )
    e_th = quat_to_rotvec(q_err)
    jr_inv = right_jacobian_inv(e_th)

    j_a = np.zeros((6, 6))
    j_a[:3, :3] = -r_a.T
    j_a[:3, 3:] = skew(u)
    j_a[3:, 3:] = -jr_inv @ (r_b.T @ r_a)

    j_b = np.zeros((6, 6))
    j_b[:3, :3] = r_a.T
    j_b[3:, 3:] = jr_inv
    return np.concatenate([e_t, e_th]), j_a, j_b


def plane_edge_error(
    pose_i: Pose,
    pose_m: Pose,
    obs_i: HessePlane,
    rec_m: HessePlane,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Closest-point error of a plane co-observed by two keyframes.

    ``rec_m`` (expressed in keyframe m) is transported into keyframe i
    through the two world poses; the error is the difference of the CP
    vectors η = n·d of the observation and the prediction, both in frame i.
    The CP vector is invariant under the (n, d) ↔ (-n, -d) representation
    flip, so no sign alignment is required, and the error is zero exactly
    when poses and observations are mutually consistent.

    Returns (e (3,), J_i (3, 6), J_m (3, 6)) with pose tangents (δp, δθ).
    """
    r_m = pose_m.rotation
    n_w = r_m @ rec_m.normal
    d_w = rec_m.distance + float(np.dot(pose_m.t, n_w))
    r_i = pose_i.rotation
    n_i = r_i.T @ n_w
    d_i = d_w - float(np.dot(pose_i.t, n_w))
    e = obs_i.closest_point() - n_i * d_i

    # η_pred = n_i d_i with n_i = R_iᵀ n_w and d_i = d_w - p_i·n_w
    j_i = np.zeros((3, 6))
    j_i[:, :3] = np.outer(n_i, n_w)
    j_i[:, 3:] = -d_i * skew(n_i)

    a = -r_m @ skew(rec_m.normal)  # ∂n_w/∂δθ_m
    c = (pose_m.t - pose_i.t) @ a
    j_m = np.zeros((3, 6))
    j_m[:, :3] = -np.outer(n_i, n_w)
    j_m[:, 3:] = -(d_i * (r_i.T @ a) + np.outer(n_i, c))
    return e, j_i, j_m


__all__ = [
    "imu_residual",
    "imu_sqrt_information",
    "point_plane_batch",
    "point_line_batch",
    "pose_edge_residual",
    "plane_edge_error",
]
