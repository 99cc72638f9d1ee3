"""Ground-truth vehicle trajectories sampled at 1 kHz."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pose import Pose, euler_to_quat, quat_mul, quat_conj, quat_rotate, quat_to_rotvec, rotvec_to_quat

SAMPLE_PERIOD_US = 1000
KINDS = ("straight", "arc", "random_smooth")


@dataclass
class Trajectory:
    """Densely sampled continuous pose function.

    ``times_us`` are integer microseconds on a 1 kHz grid; poses between
    samples are interpolated (linear translation, slerp rotation).
    """

    times_us: np.ndarray
    positions: np.ndarray
    quats: np.ndarray

    @property
    def duration_us(self) -> int:
        return int(self.times_us[-1] - self.times_us[0])

    def sample(self, t_us) -> tuple[np.ndarray, np.ndarray]:
        """Translations (n,3) and quaternions (n,4) at arbitrary integer timestamps."""
        t = np.atleast_1d(np.asarray(t_us, dtype=np.int64))
        if t.min() < self.times_us[0] or t.max() > self.times_us[-1]:
            raise ValueError("timestamp outside trajectory span")
        rel = t - self.times_us[0]
        i0 = np.minimum(rel // SAMPLE_PERIOD_US, len(self.times_us) - 2)
        frac = (rel - i0 * SAMPLE_PERIOD_US) / SAMPLE_PERIOD_US
        p = self.positions[i0] + (self.positions[i0 + 1] - self.positions[i0]) * frac[:, None]
        q0, q1 = self.quats[i0], self.quats[i0 + 1]
        delta = quat_to_rotvec(quat_mul(quat_conj(q0), q1))
        q = quat_mul(q0, rotvec_to_quat(delta * frac[:, None]))
        return p, q

    def pose_at(self, t_us: int) -> Pose:
        p, q = self.sample([t_us])
        return Pose(p[0], q[0])


def _band_limited(rng: np.random.Generator, t: np.ndarray, n_terms: int, f_lo: float, f_hi: float):
    """Unit-ish amplitude sum of random sinusoids and its time integral."""
    freqs = rng.uniform(f_lo, f_hi, n_terms)
    phases = rng.uniform(0, 2 * np.pi, n_terms)
    amps = rng.normal(size=n_terms) / np.sqrt(n_terms)
    w = 2 * np.pi * freqs
    val = (amps * np.sin(np.outer(t, w) + phases)).sum(axis=1)
    integ = (amps / w * (np.cos(phases) - np.cos(np.outer(t, w) + phases))).sum(axis=1)
    return val, integ


def generate_trajectory(kind: str, duration: float, seed: int = 0, *, speed: float = 10.0,
                        radius: float = 20.0, speed_variation: float = 3.0,
                        yaw_rate_scale: float = 0.35, tilt_scale: float = 0.02) -> Trajectory:
    """Build a C1-smooth trajectory of ``duration`` seconds.

    ``straight`` moves along +x at ``speed``; ``arc`` circles with ``radius``
    counter-clockwise; ``random_smooth`` draws band-limited speed, yaw-rate
    and small roll/pitch profiles from ``seed``.
    """
    if not duration > 0:
        raise ValueError(f"duration must be positive, got {duration}")
    if kind not in KINDS:
        raise ValueError(f"unknown trajectory kind {kind!r}; expected one of {KINDS}")
    n = int(round(duration * 1e6 / SAMPLE_PERIOD_US)) + 1
    times_us = np.arange(n, dtype=np.int64) * SAMPLE_PERIOD_US
    t = times_us * 1e-6
    euler = np.zeros((n, 3))

    if kind == "straight":
        pos = np.stack([speed * t, np.zeros(n), np.zeros(n)], axis=1)
    elif kind == "arc":
        yaw = speed / radius * t
        pos = np.stack([radius * np.sin(yaw), radius * (1 - np.cos(yaw)), np.zeros(n)], axis=1)
        euler[:, 2] = yaw
    else:
        rng = np.random.default_rng(seed)
        v_shape, _ = _band_limited(rng, t, 6, 0.05, 0.8)
        v = np.clip(speed + speed_variation * v_shape, 0.5, None)
        _, yaw = _band_limited(rng, t, 6, 0.03, 0.5)
        roll, _ = _band_limited(rng, t, 4, 0.1, 1.0)
        pitch, _ = _band_limited(rng, t, 4, 0.1, 1.0)
        euler = np.stack([tilt_scale * roll, tilt_scale * pitch, yaw_rate_scale * yaw], axis=1)
        q = euler_to_quat(euler)
        vel = quat_rotate(q, np.stack([v, np.zeros(n), np.zeros(n)], axis=1))
        dt = SAMPLE_PERIOD_US * 1e-6
        pos = np.zeros((n, 3))
        pos[1:] = np.cumsum(0.5 * (vel[1:] + vel[:-1]) * dt, axis=0)
        return Trajectory(times_us, pos, q)

    return Trajectory(times_us, pos, euler_to_quat(euler))
