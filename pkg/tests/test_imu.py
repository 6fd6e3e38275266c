"""Preintegration and strapdown propagation against closed-form motions.

Constant-input intervals have exact solutions; curved paths use analytic
circular trajectories so the midpoint integrator can be held to tight error
bounds without referencing its own output.
"""

import numpy as np
import pytest

from srpslam.errors import (
    EmptyStream,
    ExcessiveMotionDuringInit,
    NonMonotonicTime,
    TimestampOutOfRange,
)
from srpslam.geometry import (
    quat_angle,
    quat_conjugate,
    quat_from_ypr,
    quat_identity,
    quat_multiply,
    quat_normalize,
    quat_rotate,
    quat_to_matrix,
)
from srpslam.imu import (
    GRAVITY,
    ImuBias,
    ImuStream,
    NavState,
    estimate_static_bias,
    propagate_state,
)
from srpslam.residuals import imu_residual


def stationary_stream(duration=1.0, hz=400.0, bias=None):
    """Level, motionless IMU: accel measures -g, gyro measures zero."""
    n = int(duration * hz) + 1
    times = np.linspace(0.0, duration, n)
    gyro = np.zeros((n, 3))
    accel = np.tile(-GRAVITY, (n, 1))
    if bias is not None:
        gyro = gyro + bias.gyro
        accel = accel + bias.accel
    return ImuStream(times, gyro, accel)


def circular_stream(radius, omega, duration, hz=400.0):
    """Planar circle at constant speed, body x axis along the velocity.

    Returns (stream, state0, analytic position at t=duration).
    """
    n = int(duration * hz) + 1
    times = np.linspace(0.0, duration, n)
    yaw = omega * times + np.pi / 2.0
    gyro = np.tile([0.0, 0.0, omega], (n, 1))
    accel = np.zeros((n, 3))
    for k in range(n):
        a_world = -radius * omega**2 * np.array(
            [np.cos(omega * times[k]), np.sin(omega * times[k]), 0.0]
        )
        rot = quat_to_matrix(quat_from_ypr(yaw[k], 0.0, 0.0))
        accel[k] = rot.T @ (a_world - GRAVITY)
    state0 = NavState(
        0.0,
        np.array([radius, 0.0, 0.0]),
        np.array([0.0, radius * omega, 0.0]),
        quat_from_ypr(yaw[0], 0.0, 0.0),
    )
    p_end = radius * np.array(
        [np.cos(omega * duration), np.sin(omega * duration), 0.0]
    )
    return ImuStream(times, gyro, accel), state0, p_end


# ---------------------------------------------------------------------------
# constant-input closed forms
# ---------------------------------------------------------------------------

def test_stationary_integration_closed_form():
    stream = stationary_stream()
    pre = stream.integrate(0.0, 1.0, ImuBias.zero())
    assert quat_angle(pre.delta_q) < 1e-12
    assert np.allclose(pre.delta_v, [0.0, 0.0, 9.81], atol=1e-9)
    assert np.allclose(pre.delta_p, [0.0, 0.0, 4.905], atol=1e-9)
    assert abs(pre.dt_total - 1.0) < 1e-9


def test_constant_gyro_quarter_turn():
    n = 401
    times = np.linspace(0.0, 1.0, n)
    stream = ImuStream(times, np.tile([0.0, 0.0, np.pi / 2], (n, 1)), np.zeros((n, 3)))
    pre = stream.integrate(0.0, 1.0, ImuBias.zero())
    target = quat_from_ypr(np.pi / 2, 0.0, 0.0)
    err = quat_angle(quat_multiply(quat_conjugate(pre.delta_q), target))
    assert err < 1e-5


def test_propagate_state_stationary_and_free_fall():
    stream = stationary_stream()
    start = NavState(0.0, np.zeros(3), np.zeros(3), quat_identity())
    out = propagate_state(start, stream, 1.0)
    assert np.max(np.abs(out.p)) < 1e-9
    assert np.max(np.abs(out.v)) < 1e-9
    assert quat_angle(out.q) < 1e-9

    n = 401
    free = ImuStream(np.linspace(0.0, 1.0, n), np.zeros((n, 3)), np.zeros((n, 3)))
    out = propagate_state(start, free, 1.0)
    assert np.allclose(out.p, [0.0, 0.0, -4.905], atol=1e-9)


def test_circular_motion_matches_analytic_path():
    stream, state0, p_end = circular_stream(radius=2.0, omega=0.8, duration=5.0)
    out = propagate_state(state0, stream, 5.0)
    assert np.linalg.norm(out.p - p_end) < 1e-3


# ---------------------------------------------------------------------------
# algebraic invariants
# ---------------------------------------------------------------------------

def _random_stream(rng, duration=1.0, hz=400.0):
    n = int(duration * hz) + 1
    times = np.linspace(0.0, duration, n)

    def sig(scale):
        out = np.zeros((n, 3))
        for _ in range(3):
            f = rng.uniform(0.2, 3.0, 3)
            ph = rng.uniform(0.0, 2.0 * np.pi, 3)
            amp = rng.uniform(-scale, scale, 3)
            out += amp * np.sin(2.0 * np.pi * f * times[:, None] + ph)
        return out

    return ImuStream(times, sig(1.5), sig(4.0) - GRAVITY)


def test_concatenation_composes():
    rng = np.random.default_rng(21)
    for _ in range(5):
        stream = _random_stream(rng)
        whole = stream.integrate(0.0, 1.0, ImuBias.zero())
        a = stream.integrate(0.0, 0.4, ImuBias.zero())
        b = stream.integrate(0.4, 1.0, ImuBias.zero())
        rot_a = quat_to_matrix(a.delta_q)
        dp = a.delta_p + a.delta_v * b.dt_total + rot_a @ b.delta_p
        dv = a.delta_v + rot_a @ b.delta_v
        dq = quat_normalize(quat_multiply(a.delta_q, b.delta_q))
        assert np.linalg.norm(dp - whole.delta_p) < 1e-9
        assert np.linalg.norm(dv - whole.delta_v) < 1e-9
        assert quat_angle(quat_multiply(quat_conjugate(dq), whole.delta_q)) < 1e-9


def test_bias_zero_symmetry_is_exact():
    rng = np.random.default_rng(22)
    stream = _random_stream(rng, duration=0.5)
    bias = ImuBias(np.array([0.05, -0.02, 0.03]), np.array([0.004, 0.001, -0.002]))
    biased = stream.integrate(0.0, 0.5, bias)
    shifted = ImuStream(stream.times, stream.gyro - bias.gyro, stream.accel - bias.accel)
    unbiased = shifted.integrate(0.0, 0.5, ImuBias.zero())
    assert np.array_equal(biased.delta_p, unbiased.delta_p)
    assert np.array_equal(biased.delta_v, unbiased.delta_v)
    assert np.array_equal(biased.delta_q, unbiased.delta_q)


def test_covariance_grows_and_stays_symmetric_psd():
    rng = np.random.default_rng(23)
    stream = _random_stream(rng, duration=0.5)
    ends = np.linspace(0.05, 0.5, 10)
    prev_trace = 0.0
    for t_end in ends:
        pre = stream.integrate(0.0, float(t_end), ImuBias.zero())
        cov = pre.covariance
        assert np.allclose(cov, cov.T, atol=1e-15)
        eigs = np.linalg.eigvalsh(cov)
        assert eigs.min() > -1e-12
        trace = float(np.trace(cov))
        assert trace >= prev_trace - 1e-15
        prev_trace = trace


def test_bias_correction_is_first_order_accurate():
    rng = np.random.default_rng(24)
    stream = _random_stream(rng, duration=0.5)
    ref = ImuBias(np.array([0.02, -0.01, 0.015]), np.array([0.002, -0.001, 0.0015]))
    pre = stream.integrate(0.0, 0.5, ref)
    db = 1e-4 * np.array([1.0, -2.0, 0.5, 0.7, 1.3, -0.6])
    moved = ImuBias(ref.accel + db[:3], ref.gyro + db[3:])
    dp, dv, dq = pre.corrected_deltas(moved)
    exact = stream.integrate(0.0, 0.5, moved)
    assert np.linalg.norm(dp - exact.delta_p) < 1e-6
    assert np.linalg.norm(dv - exact.delta_v) < 1e-6
    assert quat_angle(quat_multiply(quat_conjugate(dq), exact.delta_q)) < 1e-6


def test_integrate_with_states_agrees_with_integrate():
    rng = np.random.default_rng(25)
    stream = _random_stream(rng, duration=0.4)
    start = NavState(0.0, rng.standard_normal(3), rng.standard_normal(3),
                     quat_normalize(rng.standard_normal(4)))
    pre_a = stream.integrate(0.0, 0.4, ImuBias.zero())
    pre_b, times, ps, qs = stream.integrate_with_states(start, 0.4, ImuBias.zero())
    assert np.array_equal(pre_a.delta_p, pre_b.delta_p)
    assert times[0] == 0.0 and times[-1] == 0.4
    assert np.allclose(ps[0], start.p)
    final = pre_a.predict(start)
    assert np.linalg.norm(ps[-1] - final.p) < 1e-12
    assert quat_angle(quat_multiply(quat_conjugate(qs[-1]), final.q)) < 1e-12


# ---------------------------------------------------------------------------
# stream plumbing and failure paths
# ---------------------------------------------------------------------------

def test_sample_at_interpolates_linearly():
    times = np.array([0.0, 0.1, 0.2])
    gyro = np.array([[0.0, 0.0, 0.0], [1.0, 2.0, 3.0], [2.0, 4.0, 6.0]])
    accel = 10.0 * gyro
    stream = ImuStream(times, gyro, accel)
    w, a = stream.sample_at(0.05)
    assert np.allclose(w, [0.5, 1.0, 1.5])
    assert np.allclose(a, [5.0, 10.0, 15.0])
    with pytest.raises(TimestampOutOfRange):
        stream.sample_at(0.3)


def test_stream_validation_errors():
    with pytest.raises(EmptyStream):
        ImuStream(np.array([]), np.zeros((0, 3)), np.zeros((0, 3)))
    with pytest.raises(NonMonotonicTime):
        ImuStream(np.array([0.0, 0.1, 0.1]), np.zeros((3, 3)), np.zeros((3, 3)))
    stream = stationary_stream(0.2)
    with pytest.raises(NonMonotonicTime):
        stream.integrate(0.1, 0.1, ImuBias.zero())
    with pytest.raises(NonMonotonicTime):
        propagate_state(
            NavState(0.2, np.zeros(3), np.zeros(3), quat_identity()), stream, 0.1
        )


def test_static_bias_estimation_recovers_truth():
    rng = np.random.default_rng(26)
    bias = ImuBias(np.array([0.02, -0.015, 0.01]), np.array([5e-4, -3e-4, 4e-4]))
    stream = stationary_stream(1.0, bias=bias)
    noisy = ImuStream(
        stream.times,
        stream.gyro + 1e-4 * rng.standard_normal(stream.gyro.shape),
        stream.accel + 1e-3 * rng.standard_normal(stream.accel.shape),
    )
    est = estimate_static_bias(noisy, 1.0)
    assert np.linalg.norm(est.gyro - bias.gyro) < 1e-4
    assert np.linalg.norm(est.accel - bias.accel) < 1e-3


def test_static_bias_rejects_motion():
    n = 401
    times = np.linspace(0.0, 1.0, n)
    gyro = np.zeros((n, 3))
    gyro[:, 2] = np.linspace(0.0, 1.0, n)  # ramping turn rate
    stream = ImuStream(times, gyro, np.tile(-GRAVITY, (n, 1)))
    with pytest.raises(ExcessiveMotionDuringInit):
        estimate_static_bias(stream, 1.0)


# ---------------------------------------------------------------------------
# residual consistency (detailed Jacobian checks live in the acceptance suite)
# ---------------------------------------------------------------------------

def test_imu_residual_zero_at_exact_propagation():
    rng = np.random.default_rng(27)
    stream = _random_stream(rng, duration=0.3)
    bias = ImuBias.zero()
    start = NavState(0.0, rng.standard_normal(3), rng.standard_normal(3),
                     quat_normalize(rng.standard_normal(4)))
    pre = stream.integrate(0.0, 0.3, bias)
    end = pre.predict(start)
    r, _, _ = imu_residual(pre, start, end, bias, bias)
    assert np.linalg.norm(r) < 1e-7


def test_imu_residual_position_perturbation_block():
    rng = np.random.default_rng(28)
    stream = _random_stream(rng, duration=0.3)
    bias = ImuBias.zero()
    start = NavState(0.0, np.zeros(3), np.zeros(3),
                     quat_normalize(rng.standard_normal(4)))
    pre = stream.integrate(0.0, 0.3, bias)
    end = pre.predict(start)
    shift = np.array([0.1, 0.0, 0.0])
    moved = NavState(end.t, end.p + shift, end.v.copy(), end.q.copy())
    r, _, _ = imu_residual(pre, start, moved, bias, bias)
    rot_i = quat_to_matrix(start.q)
    assert np.allclose(r[0:3], rot_i.T @ shift, atol=1e-7)
    assert np.linalg.norm(r[3:]) < 1e-7
