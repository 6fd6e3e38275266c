"""Frames, rigid transforms, quaternion kinematics and plane algebra.

Conventions, fixed project-wide:

- Quaternions are Hamilton, stored scalar-last as ``[x, y, z, w]``.
- A rotation acts on column vectors as ``x' = R(q) @ x``.
- Body angular rates enter by right multiplication,
  ``q_next = normalize(q ⊗ dq)`` with the small-angle increment
  ``dq = [0.5*omega*dt, 1]``; equivalently ``q̇ = 0.5 * Ω(omega) @ q``.
- Planes are kept in Hesse normal form ``n·x = d`` with ``|n| = 1``; the
  canonical representative has ``d >= 0``.
- Pose tangent updates are translation-additive in the parent frame and
  rotation right-multiplied: ``T(δ) = (R·Exp(δθ), p + δp)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_EPS = 1e-12


# ---------------------------------------------------------------------------
# quaternion primitives ([x, y, z, w], Hamilton)
# ---------------------------------------------------------------------------

def quat_identity() -> np.ndarray:
    return np.array([0.0, 0.0, 0.0, 1.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q)


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a ⊗ b (rotation composition R(a)R(b))."""
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return np.array(
        [
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
            aw * bw - ax * bx - ay * by - az * bz,
        ]
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([-q[0], -q[1], -q[2], q[3]])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    x, y, z, w = q
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    return np.array(
        [
            [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
            [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
            [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
        ]
    )


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    return quat_to_matrix(q) @ np.asarray(v, dtype=float)


def quat_from_rotvec(phi: np.ndarray) -> np.ndarray:
    """Exponential map: rotation vector (axis * angle) to quaternion."""
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi)
    if angle < 1e-10:
        # second-order series for sin(a/2)/a
        s = 0.5 - angle * angle / 48.0
        q = np.array([phi[0] * s, phi[1] * s, phi[2] * s, 1.0 - angle * angle / 8.0])
        return quat_normalize(q)
    axis = phi / angle
    half = 0.5 * angle
    s = np.sin(half)
    return np.array([axis[0] * s, axis[1] * s, axis[2] * s, np.cos(half)])


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    """Logarithm map: quaternion to rotation vector, angle in [0, pi]."""
    q = np.asarray(q, dtype=float)
    if q[3] < 0.0:
        q = -q
    vn = np.linalg.norm(q[:3])
    if vn < 1e-10:
        return 2.0 * q[:3] / q[3]
    angle = 2.0 * np.arctan2(vn, q[3])
    return q[:3] * (angle / vn)


def quat_angle(q: np.ndarray) -> float:
    """Rotation angle of q in [0, pi]."""
    w = min(1.0, abs(float(q[3])))
    return 2.0 * float(np.arccos(w))


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    return quat_from_rotvec(axis / np.linalg.norm(axis) * angle)


def quat_increment(omega: np.ndarray, dt: float) -> np.ndarray:
    """Small-angle increment [0.5*omega*dt, 1], renormalized."""
    h = 0.5 * dt
    q = np.array([omega[0] * h, omega[1] * h, omega[2] * h, 1.0])
    return q / np.linalg.norm(q)


def quat_slerp(a: np.ndarray, b: np.ndarray, s: float) -> np.ndarray:
    """Spherical interpolation from a (s=0) to b (s=1), shortest arc."""
    rel = quat_multiply(quat_conjugate(a), b)
    return quat_normalize(quat_multiply(a, quat_from_rotvec(s * quat_to_rotvec(rel))))


# ---------------------------------------------------------------------------
# SO(3) helpers
# ---------------------------------------------------------------------------

def skew(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix ⌊v⌋ₓ with ⌊v⌋ₓ u = v × u."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def omega_matrix(omega: np.ndarray) -> np.ndarray:
    """4x4 rate matrix [[-⌊ω⌋ₓ, ω], [-ωᵀ, 0]] with q̇ = 0.5 Ω(ω) q.

    Acts on scalar-last quaternions; total function of any finite ω.
    """
    omega = np.asarray(omega, dtype=float)
    out = np.zeros((4, 4))
    out[:3, :3] = -skew(omega)
    out[:3, 3] = omega
    out[3, :3] = -omega
    return out


def so3_exp(phi: np.ndarray) -> np.ndarray:
    """Rodrigues formula so(3) -> SO(3)."""
    return quat_to_matrix(quat_from_rotvec(phi))


def so3_log(rot: np.ndarray) -> np.ndarray:
    """Rotation matrix -> rotation vector (inverse of so3_exp)."""
    trace = np.clip((np.trace(rot) - 1.0) * 0.5, -1.0, 1.0)
    angle = np.arccos(trace)
    if angle < 1e-10:
        return np.array([rot[2, 1] - rot[1, 2], rot[0, 2] - rot[2, 0], rot[1, 0] - rot[0, 1]]) * 0.5
    if angle > np.pi - 1e-6:
        # near pi: extract axis from the symmetric part
        aa = np.sqrt(np.maximum(np.diag(rot) + 1.0, 0.0) / 2.0)
        k = int(np.argmax(aa))
        axis = np.empty(3)
        axis[k] = aa[k]
        for j in range(3):
            if j != k:
                axis[j] = (rot[k, j] + rot[j, k]) / (4.0 * aa[k])
        axis /= np.linalg.norm(axis)
        if np.dot(axis, [rot[2, 1] - rot[1, 2], rot[0, 2] - rot[2, 0], rot[1, 0] - rot[0, 1]]) < 0:
            axis = -axis
        return axis * angle
    w = np.array([rot[2, 1] - rot[1, 2], rot[0, 2] - rot[2, 0], rot[1, 0] - rot[0, 1]])
    return w * (angle / (2.0 * np.sin(angle)))


def right_jacobian(phi: np.ndarray) -> np.ndarray:
    """Jr(φ) with Exp(φ + δ) ≈ Exp(φ) Exp(Jr(φ) δ)."""
    angle = np.linalg.norm(phi)
    sk = skew(phi)
    if angle < 1e-7:
        return np.eye(3) - 0.5 * sk + sk @ sk / 6.0
    a2 = angle * angle
    return (
        np.eye(3)
        - (1.0 - np.cos(angle)) / a2 * sk
        + (angle - np.sin(angle)) / (a2 * angle) * (sk @ sk)
    )


def right_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    angle = np.linalg.norm(phi)
    sk = skew(phi)
    if angle < 1e-7:
        return np.eye(3) + 0.5 * sk + sk @ sk / 12.0
    a2 = angle * angle
    cot_term = (1.0 / a2) - (1.0 + np.cos(angle)) / (2.0 * angle * np.sin(angle))
    return np.eye(3) + 0.5 * sk + cot_term * (sk @ sk)


def left_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    """Jl⁻¹(φ) = Jr⁻¹(−φ)."""
    return right_jacobian_inv(-np.asarray(phi, dtype=float))


# ---------------------------------------------------------------------------
# Euler angles (Z-Y-X: yaw, pitch, roll)
# ---------------------------------------------------------------------------

def quat_from_ypr(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """R = Rz(yaw) Ry(pitch) Rx(roll)."""
    qz = quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), yaw)
    qy = quat_from_axis_angle(np.array([0.0, 1.0, 0.0]), pitch)
    qx = quat_from_axis_angle(np.array([1.0, 0.0, 0.0]), roll)
    return quat_multiply(quat_multiply(qz, qy), qx)


def quat_to_ypr(q: np.ndarray) -> tuple[float, float, float]:
    """Inverse of quat_from_ypr; pitch in [-pi/2, pi/2]."""
    rot = quat_to_matrix(q)
    pitch = np.arcsin(np.clip(-rot[2, 0], -1.0, 1.0))
    if abs(rot[2, 0]) < 1.0 - 1e-12:
        yaw = np.arctan2(rot[1, 0], rot[0, 0])
        roll = np.arctan2(rot[2, 1], rot[2, 2])
    else:
        yaw = np.arctan2(-rot[0, 1], rot[1, 1])
        roll = 0.0
    return float(yaw), float(pitch), float(roll)


# ---------------------------------------------------------------------------
# Pose
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Pose:
    """Rigid transform: maps child-frame coordinates into the parent frame,
    x_parent = R(q) @ x_child + t."""

    q: np.ndarray
    t: np.ndarray

    @staticmethod
    def identity() -> "Pose":
        return Pose(quat_identity(), np.zeros(3))

    @staticmethod
    def from_qt(q: np.ndarray, t: np.ndarray) -> "Pose":
        return Pose(quat_normalize(q), np.asarray(t, dtype=float).copy())

    @staticmethod
    def from_ypr(yaw: float, pitch: float, roll: float, t=(0.0, 0.0, 0.0)) -> "Pose":
        return Pose(quat_from_ypr(yaw, pitch, roll), np.asarray(t, dtype=float))

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def compose(self, other: "Pose") -> "Pose":
        return Pose(
            quat_normalize(quat_multiply(self.q, other.q)),
            self.rotation @ other.t + self.t,
        )

    def inverse(self) -> "Pose":
        qc = quat_conjugate(self.q)
        return Pose(qc, -quat_rotate(qc, self.t))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one point (3,) or many (N, 3)."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            return self.rotation @ pts + self.t
        return pts @ self.rotation.T + self.t

    def retract(self, dp: np.ndarray, dtheta: np.ndarray) -> "Pose":
        """Tangent update: translation additive, rotation right-multiplied."""
        return Pose(
            quat_normalize(quat_multiply(self.q, quat_from_rotvec(dtheta))),
            self.t + np.asarray(dp, dtype=float),
        )

    def interpolate(self, s: float) -> "Pose":
        """Geodesic interpolation from identity (s=0) to this pose (s=1)."""
        return Pose(quat_from_rotvec(s * quat_to_rotvec(self.q)), s * self.t)

    def almost_equal(self, other: "Pose", tol: float = 1e-9) -> bool:
        rel = self.inverse().compose(other)
        return quat_angle(rel.q) < tol and float(np.linalg.norm(rel.t)) < tol


def pose_compose(a: Pose, b: Pose) -> Pose:
    return a.compose(b)


# ---------------------------------------------------------------------------
# Planes (Hesse normal form)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HessePlane:
    """Plane {x : n·x = d} with unit n; canonical representative has d >= 0."""

    normal: np.ndarray
    distance: float

    @staticmethod
    def make(normal: np.ndarray, distance: float) -> "HessePlane":
        n = np.asarray(normal, dtype=float)
        norm = np.linalg.norm(n)
        if norm < _EPS:
            raise ValueError("plane normal must be nonzero")
        n = n / norm
        d = float(distance) / norm if abs(norm - 1.0) > 1e-9 else float(distance)
        if d < 0.0:
            n, d = -n, -d
        return HessePlane(n, d)

    @staticmethod
    def from_normal_point(normal: np.ndarray, point: np.ndarray) -> "HessePlane":
        n = np.asarray(normal, dtype=float)
        n = n / np.linalg.norm(n)
        return HessePlane.make(n, float(np.dot(n, point)))

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.normal - self.distance

    def closest_point(self) -> np.ndarray:
        """CP vector η = n·d (invariant under the (n,d) ↔ (−n,−d) flip)."""
        return self.normal * self.distance


def transform_plane(t: Pose, plane: HessePlane) -> HessePlane:
    """Re-express a plane in the frame t maps into.

    For the point map x' = R x + p the plane (n, d) becomes
    n' = R n, d' = d + p·(R n); output is re-normalized and canonicalized.
    """
    n_new = quat_rotate(t.q, plane.normal)
    d_new = plane.distance + float(np.dot(t.t, n_new))
    return HessePlane.make(n_new, d_new)


def plane_angle(a: HessePlane, b: HessePlane) -> float:
    """Angle between plane normals in [0, pi]."""
    c = float(np.clip(np.dot(a.normal, b.normal), -1.0, 1.0))
    return float(np.arccos(c))


# ---------------------------------------------------------------------------
# batch helpers used by deskew and the simulator
# ---------------------------------------------------------------------------

def ypr_to_quat_batch(yaw: np.ndarray, pitch: np.ndarray, roll: np.ndarray) -> np.ndarray:
    """Vectorized Z-Y-X Euler -> quaternion, (N,) each -> (N, 4)."""
    cy, sy = np.cos(0.5 * yaw), np.sin(0.5 * yaw)
    cp, sp = np.cos(0.5 * pitch), np.sin(0.5 * pitch)
    cr, sr = np.cos(0.5 * roll), np.sin(0.5 * roll)
    return np.stack(
        [
            sr * cp * cy - cr * sp * sy,
            cr * sp * cy + sr * cp * sy,
            cr * cp * sy - sr * sp * cy,
            cr * cp * cy + sr * sp * sy,
        ],
        axis=-1,
    )


def quats_to_matrices(q: np.ndarray) -> np.ndarray:
    """Vectorized quaternion -> rotation matrix, (N, 4) -> (N, 3, 3)."""
    x, y, z, w = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    out = np.empty((q.shape[0], 3, 3))
    out[:, 0, 0] = 1.0 - 2.0 * (yy + zz)
    out[:, 0, 1] = 2.0 * (xy - wz)
    out[:, 0, 2] = 2.0 * (xz + wy)
    out[:, 1, 0] = 2.0 * (xy + wz)
    out[:, 1, 1] = 1.0 - 2.0 * (xx + zz)
    out[:, 1, 2] = 2.0 * (yz - wx)
    out[:, 2, 0] = 2.0 * (xz - wy)
    out[:, 2, 1] = 2.0 * (yz + wx)
    out[:, 2, 2] = 1.0 - 2.0 * (xx + yy)
    return out

def rotvecs_to_matrices(phi: np.ndarray) -> np.ndarray:
    """Vectorized Rodrigues: (N, 3) rotation vectors -> (N, 3, 3) matrices."""
    phi = np.asarray(phi, dtype=float)
    angles = np.linalg.norm(phi, axis=1)
    small = angles < 1e-10
    safe = np.where(small, 1.0, angles)
    axes = phi / safe[:, None]
    sk = np.zeros((phi.shape[0], 3, 3))
    sk[:, 0, 1] = -axes[:, 2]
    sk[:, 0, 2] = axes[:, 1]
    sk[:, 1, 0] = axes[:, 2]
    sk[:, 1, 2] = -axes[:, 0]
    sk[:, 2, 0] = -axes[:, 1]
    sk[:, 2, 1] = axes[:, 0]
    sin_a = np.sin(angles)[:, None, None]
    cos_a = (1.0 - np.cos(angles))[:, None, None]
    out = np.eye(3)[None, :, :] + sin_a * sk + cos_a * (sk @ sk)
    out[small] = np.eye(3) + sk[small] * angles[small, None, None]
    return out
