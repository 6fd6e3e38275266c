"""IMU types, midpoint preintegration, and inter-frame state prediction.

The preintegrated quantities (Δp, Δv, Δq) live in the body frame of the first
timestamp of the interval and deliberately exclude gravity, so re-linearizing
the absolute states never requires re-integrating raw samples.  A first-order
correction in the reference bias keeps the deltas usable as the bias estimate
moves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from srpslam.errors import (
    BiasReferenceStale,
    EmptyStream,
    ExcessiveMotionDuringInit,
    NonMonotonicTime,
    TimestampOutOfRange,
)
from srpslam.geometry import (
    quat_identity,
    quat_multiply,
    quat_normalize,
    quat_rotate,
    quat_to_matrix,
    quat_from_rotvec,
    right_jacobian,
    skew,
)

GRAVITY = np.array([0.0, 0.0, -9.81])

# beyond this deviation from the reference bias the first-order correction is
# no longer trustworthy and the caller must re-integrate
MAX_BIAS_DEVIATION = 0.5


@dataclass(frozen=True)
class ImuBias:
    accel: np.ndarray
    gyro: np.ndarray

    @staticmethod
    def zero() -> "ImuBias":
        return ImuBias(np.zeros(3), np.zeros(3))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.accel, self.gyro])

    @staticmethod
    def from_vector(v: np.ndarray) -> "ImuBias":
        v = np.asarray(v, dtype=float)
        return ImuBias(v[:3].copy(), v[3:6].copy())


@dataclass(frozen=True)
class ImuNoise:
    """Continuous-time noise densities (per sqrt(Hz)) and bias random walks."""

    accel_density: float = 1e-2
    gyro_density: float = 1e-3
    accel_walk: float = 2e-4
    gyro_walk: float = 2e-5


@dataclass
class NavState:
    """World-frame navigation state at one instant."""

    t: float
    p: np.ndarray
    v: np.ndarray
    q: np.ndarray  # body-to-world, [x, y, z, w]

    def copy(self) -> "NavState":
        return NavState(self.t, self.p.copy(), self.v.copy(), self.q.copy())


class Preintegration:
    """Midpoint preintegration of gyro/accel samples over one interval.

    Covariance is 9x9 over the error state (δp, δv, δθ), with δθ the right
    perturbation of Δq.  Bias Jacobians give the first-order sensitivity of
    the deltas to the reference bias used during integration.
    """

    def __init__(self, bias_ref: ImuBias, noise: ImuNoise | None = None):
        self.bias_ref = bias_ref
        self.noise = noise if noise is not None else ImuNoise()
        self.delta_p = np.zeros(3)
        self.delta_v = np.zeros(3)
        self.delta_q = quat_identity()
        self.dt_total = 0.0
        self.covariance = np.zeros((9, 9))
        self.J_p_ba = np.zeros((3, 3))
        self.J_p_bg = np.zeros((3, 3))
        self.J_v_ba = np.zeros((3, 3))
        self.J_v_bg = np.zeros((3, 3))
        self.J_q_bg = np.zeros((3, 3))

    def add(self, dt: float, gyro0, accel0, gyro1, accel1) -> None:
        """One midpoint step between two consecutive samples dt apart."""
        if dt <= 0.0:
            raise NonMonotonicTime(f"non-positive IMU step dt={dt}")
        ba = self.bias_ref.accel
        bg = self.bias_ref.gyro
        # bias is removed per sample *before* averaging so that integrating
        # pre-corrected samples with zero bias is bit-identical
        w0 = np.asarray(gyro0, dtype=float) - bg
        w1 = np.asarray(gyro1, dtype=float) - bg
        a0 = np.asarray(accel0, dtype=float) - ba
        a1 = np.asarray(accel1, dtype=float) - ba

        w_mid = 0.5 * (w0 + w1)
        q0 = self.delta_q
        r0 = quat_to_matrix(q0)
        q1 = quat_normalize(quat_multiply(q0, _increment(w_mid, dt)))
        r1 = quat_to_matrix(q1)

        a_mid = 0.5 * (r0 @ a0 + r1 @ a1)
        new_p = self.delta_p + self.delta_v * dt + 0.5 * a_mid * dt * dt
        new_v = self.delta_v + a_mid * dt

        # --- error-state propagation, order (δp, δv, δθ) -------------------
        dr = quat_to_matrix(_increment(w_mid, dt))  # Exp(w_mid dt)
        sk0 = r0 @ skew(a0)
        sk1 = r1 @ skew(a1)
        a_theta = -0.5 * (sk0 + sk1 @ dr.T)

        f = np.eye(9)
        f[0:3, 3:6] = np.eye(3) * dt
        f[0:3, 6:9] = 0.5 * a_theta * dt * dt
        f[3:6, 6:9] = a_theta * dt
        f[6:9, 6:9] = dr.T

        # noise order (n_a0, n_g0, n_a1, n_g1)
        g = np.zeros((9, 12))
        g[3:6, 0:3] = -0.5 * r0 * dt
        g[3:6, 3:6] = 0.25 * sk1 * dt * dt
        g[3:6, 6:9] = -0.5 * r1 * dt
        g[3:6, 9:12] = 0.25 * sk1 * dt * dt
        g[0:3, :] = 0.5 * dt * g[3:6, :]
        g[6:9, 3:6] = -0.5 * np.eye(3) * dt
        g[6:9, 9:12] = -0.5 * np.eye(3) * dt

        sa = self.noise.accel_density**2 / dt
        sg = self.noise.gyro_density**2 / dt
        q_diag = np.concatenate([np.full(3, sa), np.full(3, sg), np.full(3, sa), np.full(3, sg)])
        self.covariance = f @ self.covariance @ f.T + (g * q_diag) @ g.T

        # --- bias Jacobians ------------------------------------------------
        jr = right_jacobian(w_mid * dt)
        new_J_q_bg = dr.T @ self.J_q_bg - jr * dt
        dA_bg = -0.5 * (sk0 @ self.J_q_bg + sk1 @ dr.T @ self.J_q_bg - sk1 @ jr * dt)
        dA_ba = -0.5 * (r0 + r1)
        self.J_p_ba = self.J_p_ba + self.J_v_ba * dt + 0.5 * dA_ba * dt * dt
        self.J_p_bg = self.J_p_bg + self.J_v_bg * dt + 0.5 * dA_bg * dt * dt
        self.J_v_ba = self.J_v_ba + dA_ba * dt
        self.J_v_bg = self.J_v_bg + dA_bg * dt
        self.J_q_bg = new_J_q_bg

        self.delta_p = new_p
        self.delta_v = new_v
        self.delta_q = q1
        self.dt_total += dt

    # ------------------------------------------------------------------

    def corrected_deltas(self, bias: ImuBias) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Deltas re-expressed at ``bias`` via the first-order correction."""
        dba = bias.accel - self.bias_ref.accel
        dbg = bias.gyro - self.bias_ref.gyro
        dev = max(np.linalg.norm(dba), np.linalg.norm(dbg))
        if dev > MAX_BIAS_DEVIATION:
            raise BiasReferenceStale(
                f"bias moved {dev:.3f} from the integration reference"
            )
        dp = self.delta_p + self.J_p_ba @ dba + self.J_p_bg @ dbg
        dv = self.delta_v + self.J_v_ba @ dba + self.J_v_bg @ dbg
        dq = quat_normalize(quat_multiply(self.delta_q, quat_from_rotvec(self.J_q_bg @ dbg)))
        return dp, dv, dq

    def predict(self, state: NavState, bias: ImuBias | None = None,
                gravity: np.ndarray = GRAVITY) -> NavState:
        """Propagate an absolute state across this interval."""
        if bias is None:
            dp, dv, dq = self.delta_p, self.delta_v, self.delta_q
        else:
            dp, dv, dq = self.corrected_deltas(bias)
        dt = self.dt_total
        r_i = quat_to_matrix(state.q)
        p = state.p + state.v * dt + 0.5 * gravity * dt * dt + r_i @ dp
        v = state.v + gravity * dt + r_i @ dv
        q = quat_normalize(quat_multiply(state.q, dq))
        return NavState(state.t + dt, p, v, q)


def _increment(omega: np.ndarray, dt: float) -> np.ndarray:
    h = 0.5 * dt
    q = np.array([omega[0] * h, omega[1] * h, omega[2] * h, 1.0])
    return q / np.linalg.norm(q)


# ---------------------------------------------------------------------------
# sample streams
# ---------------------------------------------------------------------------

@dataclass
class ImuStream:
    """Time-ordered gyro/accel samples with boundary interpolation."""

    times: np.ndarray
    gyro: np.ndarray   # (N, 3)
    accel: np.ndarray  # (N, 3)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.gyro = np.asarray(self.gyro, dtype=float)
        self.accel = np.asarray(self.accel, dtype=float)
        if self.times.size == 0:
            raise EmptyStream("IMU stream has no samples")
        if np.any(np.diff(self.times) <= 0.0):
            raise NonMonotonicTime("IMU timestamps must strictly increase")

    def sample_at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Linear interpolation of (gyro, accel) at time t."""
        times = self.times
        if t < times[0] - 1e-9 or t > times[-1] + 1e-9:
            raise TimestampOutOfRange(
                f"t={t:.6f} outside IMU coverage [{times[0]:.6f}, {times[-1]:.6f}]"
            )
        t = min(max(t, times[0]), times[-1])
        k = int(np.searchsorted(times, t, side="right")) - 1
        k = min(max(k, 0), times.size - 2) if times.size > 1 else 0
        if times.size == 1:
            return self.gyro[0].copy(), self.accel[0].copy()
        s = (t - times[k]) / (times[k + 1] - times[k])
        w = (1.0 - s) * self.gyro[k] + s * self.gyro[k + 1]
        a = (1.0 - s) * self.accel[k] + s * self.accel[k + 1]
        return w, a

    def integrate(self, t0: float, t1: float, bias: ImuBias,
                  noise: ImuNoise | None = None) -> Preintegration:
        """Preintegrate over [t0, t1] with interpolated boundary samples."""
        if t1 <= t0:
            raise NonMonotonicTime(f"integration interval [{t0}, {t1}] is empty")
        pre = Preintegration(bias, noise)
        lo = int(np.searchsorted(self.times, t0, side="right"))
        hi = int(np.searchsorted(self.times, t1, side="left"))
        # knot sequence: t0, interior sample times, t1
        knots_t = [t0] + [float(self.times[k]) for k in range(lo, hi)] + [t1]
        w0, a0 = self.sample_at(t0)
        prev_t, prev_w, prev_a = t0, w0, a0
        for idx in range(1, len(knots_t)):
            t = knots_t[idx]
            if idx == len(knots_t) - 1:
                w, a = self.sample_at(t1)
            else:
                k = lo + idx - 1
                w, a = self.gyro[k], self.accel[k]
            dt = t - prev_t
            if dt > 1e-12:
                pre.add(dt, prev_w, prev_a, w, a)
            prev_t, prev_w, prev_a = t, w, a
        if pre.dt_total <= 0.0:
            raise EmptyStream(f"no usable IMU motion in [{t0}, {t1}]")
        return pre

    def integrate_with_states(
        self, state: NavState, t1: float, bias: ImuBias,
        noise: ImuNoise | None = None,
    ) -> tuple[Preintegration, np.ndarray, np.ndarray, np.ndarray]:
        """Preintegrate over [state.t, t1] recording the state at every knot.

        Returns (pre, times, positions, quats) where the arrays hold the
        predicted world-frame trajectory at the integration knots, starting
        with `state` itself.  The preintegration is identical to the one
        produced by `integrate` over the same interval.
        """
        t0 = state.t
        if t1 <= t0:
            raise NonMonotonicTime(f"integration interval [{t0}, {t1}] is empty")
        pre = Preintegration(bias, noise)
        lo = int(np.searchsorted(self.times, t0, side="right"))
        hi = int(np.searchsorted(self.times, t1, side="left"))
        knots_t = [t0] + [float(self.times[k]) for k in range(lo, hi)] + [t1]
        ts = [t0]
        ps = [np.asarray(state.p, dtype=float).copy()]
        qs = [np.asarray(state.q, dtype=float).copy()]
        w0, a0 = self.sample_at(t0)
        prev_t, prev_w, prev_a = t0, w0, a0
        for idx in range(1, len(knots_t)):
            t = knots_t[idx]
            if idx == len(knots_t) - 1:
                w, a = self.sample_at(t1)
            else:
                k = lo + idx - 1
                w, a = self.gyro[k], self.accel[k]
            dt = t - prev_t
            if dt > 1e-12:
                pre.add(dt, prev_w, prev_a, w, a)
                st = pre.predict(state)
                ts.append(t)
                ps.append(st.p)
                qs.append(st.q)
            prev_t, prev_w, prev_a = t, w, a
        if pre.dt_total <= 0.0:
            raise EmptyStream(f"no usable IMU motion in [{t0}, {t1}]")
        return pre, np.asarray(ts), np.asarray(ps), np.asarray(qs)


def propagate_state(
    state: NavState,
    stream: ImuStream,
    t1: float | None = None,
    bias: ImuBias | None = None,
    gravity: np.ndarray = GRAVITY,
) -> NavState:
    """Direct world-frame strapdown propagation over [state.t, t1].

    Steps through the same sample knots as ``ImuStream.integrate`` but
    accumulates gravity inside every step instead of factoring it out, so it
    serves as an independent cross-check of the preintegration reassembly.
    """
    t0 = state.t
    if t1 is None:
        t1 = float(stream.times[-1])
    if t1 <= t0:
        raise NonMonotonicTime(f"propagation interval [{t0}, {t1}] is empty")
    if bias is None:
        bias = ImuBias.zero()

    lo = int(np.searchsorted(stream.times, t0, side="right"))
    hi = int(np.searchsorted(stream.times, t1, side="left"))
    knots_t = [t0] + [float(stream.times[k]) for k in range(lo, hi)] + [t1]

    p = np.asarray(state.p, dtype=float).copy()
    v = np.asarray(state.v, dtype=float).copy()
    q = np.asarray(state.q, dtype=float).copy()
    w_prev, a_prev = stream.sample_at(t0)
    prev_t = t0
    for idx in range(1, len(knots_t)):
        t = knots_t[idx]
        if idx == len(knots_t) - 1:
            w, a = stream.sample_at(t1)
        else:
            k = lo + idx - 1
            w, a = stream.gyro[k], stream.accel[k]
        dt = t - prev_t
        if dt > 1e-12:
            w_mid = 0.5 * ((w_prev - bias.gyro) + (w - bias.gyro))
            q_next = quat_normalize(quat_multiply(q, _increment(w_mid, dt)))
            a_world = 0.5 * (
                quat_rotate(q, a_prev - bias.accel)
                + quat_rotate(q_next, a - bias.accel)
            ) + gravity
            p = p + v * dt + 0.5 * a_world * dt * dt
            v = v + a_world * dt
            q = q_next
        prev_t, w_prev, a_prev = t, w, a
    return NavState(t1, p, v, q)


def estimate_static_bias(
    stream: ImuStream,
    t_end: float,
    gravity: np.ndarray = GRAVITY,
    max_gyro_std: float = 0.05,
    max_accel_std: float = 0.5,
) -> ImuBias:
    """Bias from an initial stationary, level interval [t_start, t_end].

    Raises ExcessiveMotionDuringInit when the window shows real motion.
    """
    mask = stream.times <= t_end
    if not np.any(mask):
        raise EmptyStream("no IMU samples before static-init end time")
    gyro = stream.gyro[mask]
    accel = stream.accel[mask]
    if np.max(gyro.std(axis=0)) > max_gyro_std or np.max(accel.std(axis=0)) > max_accel_std:
        raise ExcessiveMotionDuringInit(
            "static initialization window contains significant motion"
        )
    # stationary and level: the accelerometer reads -g plus bias
    bias_g = gyro.mean(axis=0)
    bias_a = accel.mean(axis=0) + gravity
    return ImuBias(bias_a, bias_g)


__all__ = [
    "GRAVITY",
    "ImuBias",
    "ImuNoise",
    "ImuStream",
    "NavState",
    "Preintegration",
    "estimate_static_bias",
    "propagate_state",
]
