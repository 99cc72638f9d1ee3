"""Trajectories, pose algebra and asynchronous measurement streams."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aftvo.eval.trajectory import compose_trajectory
from aftvo.sim import (MeasurementStream, Pose, SensorSpec, dumps_stream, euler_to_quat, generate_trajectory,
                       loads_stream, quat_to_euler, random_outages, relative_pose, sample_sensor, stream_truth)
from aftvo.sim.pose import quat_mul, quat_normalize
from aftvo.sim.streamio import StreamFormatError

angles = st.floats(-np.pi + 1e-3, np.pi - 1e-3)
pitches = st.floats(-np.pi / 2 + 0.1, np.pi / 2 - 0.1)
coords = st.floats(-50, 50)


def random_pose(rng):
    return Pose(rng.uniform(-5, 5, 3), quat_normalize(rng.standard_normal(4)))


# -- trajectories ---------------------------------------------------------------

def test_straight_constant_velocity():
    traj = generate_trajectory("straight", 2.0, speed=10.0)
    p, q = traj.sample([1_000_000])
    assert np.allclose(p[0], [10.0, 0.0, 0.0])
    assert np.allclose(q[0], [1, 0, 0, 0])


def test_arc_full_loop_heading():
    radius, speed = 20.0, 10.0
    period = 2 * np.pi * radius / speed
    traj = generate_trajectory("arc", period, radius=radius, speed=speed)
    yaw = np.unwrap(quat_to_euler(traj.quats)[:, 2])
    # the 1 kHz grid ends within half a sample of the loop period
    assert yaw[-1] - yaw[0] == pytest.approx(2 * np.pi, abs=speed / radius * 5e-4)
    end = traj.times_us[-1] * 1e-6
    assert yaw[-1] - yaw[0] == pytest.approx(speed / radius * end, abs=1e-9)


def test_random_smooth_seeded():
    a = generate_trajectory("random_smooth", 5.0, seed=3)
    b = generate_trajectory("random_smooth", 5.0, seed=3)
    c = generate_trajectory("random_smooth", 5.0, seed=4)
    assert np.array_equal(a.positions, b.positions) and np.array_equal(a.quats, b.quats)
    assert not np.array_equal(a.positions, c.positions)


def test_random_smooth_is_c1():
    traj = generate_trajectory("random_smooth", 10.0, seed=1)
    vel = np.diff(traj.positions, axis=0) / 1e-3
    acc = np.diff(vel, axis=0) / 1e-3
    assert np.abs(acc).max() < 20.0
    assert np.allclose(np.linalg.norm(traj.quats, axis=1), 1.0, atol=1e-12)


@pytest.mark.parametrize("duration", [0.0, -1.0])
def test_non_positive_duration(duration):
    with pytest.raises(ValueError):
        generate_trajectory("straight", duration)


# -- poses -------------------------------------------------------------------------

def test_relative_pose_examples():
    a = Pose(np.array([0.3, -1.0, 2.0]), euler_to_quat(np.array([0.1, -0.2, 0.7])))
    assert np.allclose(relative_pose(a, a), np.zeros(6), atol=1e-12)
    b = Pose(np.array([1.0, 2.0, 3.0]), np.array([1.0, 0, 0, 0]))
    assert np.allclose(relative_pose(Pose.identity(), b), [1, 2, 3, 0, 0, 0])


def test_composition_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(200):
        a, b = random_pose(rng), random_pose(rng)
        back = a.compose(a.inverse().compose(b))
        assert np.allclose(back.translation, b.translation, atol=1e-9)
        assert min(np.abs(back.quat - b.quat).max(), np.abs(back.quat + b.quat).max()) < 1e-9
        assert abs(np.linalg.norm(a.compose(b).quat) - 1.0) < 1e-9


@settings(max_examples=300, deadline=None)
@given(angles, pitches, angles)
def test_euler_round_trip_away_from_gimbal_lock(roll, pitch, yaw):
    e = np.array([roll, pitch, yaw])
    assert np.abs(quat_to_euler(euler_to_quat(e)) - e).max() < 1e-9


@settings(max_examples=200, deadline=None)
@given(st.tuples(coords, coords, coords), angles, pitches, angles)
def test_vec6_round_trip(t, roll, pitch, yaw):
    v = np.array([*t, roll, pitch, yaw])
    assert np.allclose(Pose.from_vec6(v).to_vec6(), v, atol=1e-9)


# -- sensors -----------------------------------------------------------------------

def clean_spec(k, rate, phase):
    return SensorSpec(k, rate, phase)


def test_zero_noise_observations_equal_truth():
    traj = generate_trajectory("random_smooth", 10.0, seed=2)
    s = sample_sensor(traj, clean_spec(0, 15.0, 4_000), seed=5)
    assert np.array_equal(s.observations, stream_truth(traj, s))


def test_distinct_rates_are_asynchronous():
    traj = generate_trajectory("straight", 10.0)
    a = sample_sensor(traj, clean_spec(0, 12.0, 3_000), seed=0)
    b = sample_sensor(traj, clean_spec(1, 20.0, 7_000), seed=0)
    assert len(a) != len(b)
    assert not set(a.timestamps_us) & set(b.timestamps_us)


def test_too_few_frames():
    traj = generate_trajectory("straight", 1.0)
    with pytest.raises(ValueError):
        sample_sensor(traj, clean_spec(0, 0.5, 0), seed=0)


def test_bad_spec_values():
    with pytest.raises(ValueError):
        SensorSpec(0, 0.0)
    with pytest.raises(ValueError):
        SensorSpec(0, 10.0, dropout_prob=1.5)
    with pytest.raises(ValueError):
        SensorSpec(0, 10.0, degradation_windows=[(5, 1, 2.0)])


@pytest.mark.parametrize("trans,rot", [(0.05, 0.0), (0.0, 0.01), (0.02, 0.004)])
def test_noise_std_matches_spec(trans, rot):
    # the Monte-Carlo estimate over >= 10^4 entries is within 5% of the configured std
    traj = generate_trajectory("random_smooth", 420.0, seed=0)
    spec = SensorSpec(0, 25.0, 0, noise_std_translation=trans, noise_std_rotation=rot)
    s = sample_sensor(traj, spec, seed=9)
    assert len(s) >= 10_000
    truth = stream_truth(traj, s)
    if trans:
        assert np.std(s.observations[:, :3] - truth[:, :3]) == pytest.approx(trans, rel=0.05)
    if rot:
        # the rotation error is the tangent-space perturbation R_true^-1 R_obs
        q_err = quat_mul(_conj(euler_to_quat(truth[:, 3:])), euler_to_quat(s.observations[:, 3:]))
        angle = 2 * np.arccos(np.clip(np.abs(q_err[:, 0]), 0, 1))
        # |delta| of an isotropic 3-D Gaussian with std sigma has E|delta|^2 = 3 sigma^2
        assert np.sqrt(np.mean(angle ** 2) / 3) == pytest.approx(rot, rel=0.05)


def _conj(q):
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def test_degradation_window_scales_noise():
    traj = generate_trajectory("random_smooth", 60.0, seed=0)
    spec = SensorSpec(0, 25.0, 0, noise_std_translation=0.01, degradation_windows=[(10_000_000, 40_000_000, 5.0)])
    s = sample_sensor(traj, spec, seed=1)
    err = np.abs(s.observations[:, 0] - stream_truth(traj, s)[:, 0])
    inside = s.noise_scale == 5.0
    assert inside.any() and (~inside).any()
    assert np.std(err[inside]) > 3 * np.std(err[~inside])


@settings(max_examples=40, deadline=None)
@given(st.floats(5.0, 40.0), st.floats(0.0, 1.0), st.floats(0.0, 0.6), st.integers(0, 10_000))
def test_stream_invariants(rate, jitter_frac, dropout, seed):
    traj = generate_trajectory("straight", 4.0)
    period = 1e6 / rate
    spec = SensorSpec(0, rate, int(seed % 1000), timestamp_jitter_std=jitter_frac * period, dropout_prob=dropout)
    try:
        a = sample_sensor(traj, spec, seed)
    except ValueError:
        return
    assert np.all(np.diff(a.timestamps_us) > 0)
    assert np.all(a.frame_starts_us < a.timestamps_us)
    b = sample_sensor(traj, spec, seed)
    assert np.array_equal(a.timestamps_us, b.timestamps_us)
    assert np.array_equal(a.observations, b.observations)


def test_zero_noise_streams_compose_to_truth():
    traj = generate_trajectory("random_smooth", 20.0, seed=4)
    for k, (rate, phase) in enumerate([(12.0, 3_000), (17.0, 11_000), (25.0, 7_000)]):
        s = sample_sensor(traj, SensorSpec(k, rate, phase, timestamp_jitter_std=5_000.0, dropout_prob=0.1), seed=2)
        start = traj.pose_at(s.first_frame_us)
        est = compose_trajectory(s.timestamps_us, s.observations, start, s.first_frame_us)
        p, _ = traj.sample(est.timestamps_us)
        assert np.abs(est.positions - p).max() < 1e-6


def test_outages_restart_the_chain():
    traj = generate_trajectory("random_smooth", 20.0, seed=1)
    spec = SensorSpec(0, 20.0, 1_000, outages=[(4_000_000, 5_500_000), (12_000_000, 12_300_000)])
    s = sample_sensor(traj, spec, seed=0)
    assert len(s.restarts) == 2
    for a, b in spec.outages:
        assert not np.any((s.timestamps_us >= a) & (s.timestamps_us <= b))
        assert not np.any((s.frame_starts_us >= a) & (s.frame_starts_us <= b))
    assert np.array_equal(s.observations, stream_truth(traj, s))


def test_random_outages_cover_fraction():
    rng = np.random.default_rng(0)
    duration = 3_600_000_000
    spans = random_outages(rng, duration, 0.2, (0.5, 1.5))
    covered = np.zeros(duration // 1000, dtype=bool)
    for a, b in spans:
        covered[a // 1000:b // 1000] = True
    # overlapping intervals make the union a little smaller than the nominal fraction
    assert 0.15 < covered.mean() < 0.21
    assert random_outages(rng, duration, 0.0, (0.5, 1.5)) == []


def test_correlated_group_noise():
    traj = generate_trajectory("straight", 200.0)
    kw = dict(noise_std_translation=0.01, noise_group="front", noise_correlation=0.8)
    a = sample_sensor(traj, SensorSpec(0, 10.0, 0, **kw), seed=3)
    b = sample_sensor(traj, SensorSpec(1, 10.0, 0, **kw), seed=3)
    c = sample_sensor(traj, SensorSpec(2, 10.0, 0, noise_std_translation=0.01), seed=3)
    ea = a.observations[:, 0] - stream_truth(traj, a)[:, 0]
    eb = b.observations[:, 0] - stream_truth(traj, b)[:, 0]
    ec = c.observations[:, 0] - stream_truth(traj, c)[:, 0]
    assert np.corrcoef(ea, eb)[0, 1] == pytest.approx(0.8, abs=0.06)
    assert abs(np.corrcoef(ea, ec)[0, 1]) < 0.1


# -- stream text format ---------------------------------------------------------------

def test_stream_text_round_trip_with_restarts():
    traj = generate_trajectory("random_smooth", 12.0, seed=1)
    spec = SensorSpec(2, 17.0, 5_000, noise_std_translation=0.01, noise_std_rotation=0.002,
                      timestamp_jitter_std=2_000.0, outages=[(3_000_000, 4_000_000)],
                      degradation_windows=[(6_000_000, 8_000_000, 4.0)])
    s = sample_sensor(traj, spec, seed=0)
    text = dumps_stream(s)
    assert "# restart" in text
    back = loads_stream(text)
    assert back.source_id == 2 and back.first_frame_us == s.first_frame_us
    assert np.array_equal(back.timestamps_us, s.timestamps_us)
    assert np.array_equal(back.frame_starts_us, s.frame_starts_us)
    assert np.array_equal(back.observations, s.observations)
    assert np.array_equal(back.noise_scale, s.noise_scale)
    assert dumps_stream(back) == text


def test_stream_text_rejects_garbage():
    traj = generate_trajectory("straight", 3.0)
    text = dumps_stream(sample_sensor(traj, clean_spec(0, 10.0, 0), seed=0))
    lines = text.splitlines()
    body = [i for i, line in enumerate(lines) if line and not line.startswith("#")]
    swapped = lines.copy()
    swapped[body[0]], swapped[body[1]] = swapped[body[1]], swapped[body[0]]
    with pytest.raises(StreamFormatError):
        loads_stream("\n".join(swapped))
    with pytest.raises(StreamFormatError):
        loads_stream(text.replace(lines[body[2]], lines[body[2]] + " 1.0"))


def test_stream_rejects_unordered_timestamps():
    with pytest.raises(ValueError):
        MeasurementStream(0, 0, np.array([10, 5]), np.zeros((2, 6)), np.ones(2))
