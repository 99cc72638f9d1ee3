"""Asynchronous per-sensor relative-pose measurement streams."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .pose import quat_mul, quat_to_euler, relative_pose_batch, rotvec_to_quat, euler_to_quat
from .trajectory import Trajectory

JITTER_CLAMP = 0.4
CORRELATION_BLOCK_US = 100_000


@dataclass
class SensorSpec:
    source_id: int
    nominal_rate: float
    phase_offset: int = 0
    timestamp_jitter_std: float = 0.0
    noise_std_translation: float = 0.0
    noise_std_rotation: float = 0.0
    dropout_prob: float = 0.0
    degradation_windows: list[tuple[int, int, float]] = field(default_factory=list)
    # sensors sharing a group get a common slowly varying error component
    noise_group: str | None = None
    noise_correlation: float = 0.0
    # [t_start, t_end] intervals (us) in which no frames are delivered
    outages: list[tuple[int, int]] = field(default_factory=list)
    name: str = ""

    def __post_init__(self):
        if not self.nominal_rate > 0:
            raise ValueError(f"sensor {self.source_id}: nominal_rate must be positive")
        for p, label in ((self.dropout_prob, "dropout_prob"), (self.noise_correlation, "noise_correlation")):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"sensor {self.source_id}: {label} must lie in [0, 1]")
        if self.source_id < 0:
            raise ValueError("source_id must be non-negative")
        self.degradation_windows = [(int(a), int(b), float(m)) for a, b, m in self.degradation_windows]
        self.outages = [(int(a), int(b)) for a, b in self.outages]
        for a, b, m in self.degradation_windows:
            if b < a or m < 0:
                raise ValueError(f"sensor {self.source_id}: bad degradation window {(a, b, m)}")
        if not self.name:
            self.name = f"s{self.source_id}"

    @property
    def period_us(self) -> float:
        return 1e6 / self.nominal_rate

    def noise_multiplier(self, t_us: np.ndarray) -> np.ndarray:
        mult = np.ones(len(t_us))
        for a, b, m in self.degradation_windows:
            inside = (t_us >= a) & (t_us <= b)
            mult[inside] *= m
        return mult


@dataclass
class MeasurementStream:
    """Observed relative poses of one sensor.

    Entry ``n`` holds the motion between retained frames ``n-1`` and ``n``;
    frame ``-1`` is the first retained frame at ``first_frame_us``.  After an
    outage the sensor re-initialises, so the first entry after it starts at
    a later frame instead of the previous entry's timestamp; ``starts_us``
    records every entry's start frame when such restarts exist.
    """

    source_id: int
    first_frame_us: int
    timestamps_us: np.ndarray
    observations: np.ndarray
    noise_scale: np.ndarray
    starts_us: np.ndarray | None = None

    def __post_init__(self):
        self.timestamps_us = np.asarray(self.timestamps_us, dtype=np.int64)
        self.observations = np.asarray(self.observations, dtype=float).reshape(-1, 6)
        self.noise_scale = np.asarray(self.noise_scale, dtype=float)
        if len(self.timestamps_us) and (np.any(np.diff(self.timestamps_us) <= 0)
                                        or self.timestamps_us[0] <= self.first_frame_us):
            raise ValueError("stream timestamps must be strictly increasing")
        if self.starts_us is not None:
            starts = np.asarray(self.starts_us, dtype=np.int64)
            if starts.shape != self.timestamps_us.shape or (len(starts) and starts[0] != self.first_frame_us):
                raise ValueError("starts_us must align with timestamps and begin at first_frame_us")
            if np.any(starts >= self.timestamps_us) or np.any(starts[1:] < self.timestamps_us[:-1]):
                raise ValueError("each entry must start at or after the previous entry's frame")
            self.starts_us = None if np.array_equal(starts, self._chained_starts()) else starts

    def _chained_starts(self) -> np.ndarray:
        return np.concatenate([[self.first_frame_us], self.timestamps_us[:-1]]).astype(np.int64)

    def __len__(self) -> int:
        return len(self.timestamps_us)

    @property
    def frame_starts_us(self) -> np.ndarray:
        return self._chained_starts() if self.starts_us is None else self.starts_us

    @property
    def restarts(self) -> np.ndarray:
        """Indices of entries that do not continue from the previous entry's frame."""
        return np.flatnonzero(self.frame_starts_us[1:] != self.timestamps_us[:-1]) + 1

    def subset(self, mask: np.ndarray) -> "MeasurementStream":
        starts = self.frame_starts_us[mask]
        return MeasurementStream(self.source_id, int(starts[0]), self.timestamps_us[mask],
                                 self.observations[mask], self.noise_scale[mask], starts)


def frame_times(spec: SensorSpec, duration_us: int, rng: np.random.Generator) -> np.ndarray:
    period = spec.period_us
    n = int(np.floor((duration_us - spec.phase_offset) / period)) + 1
    nominal = spec.phase_offset + np.arange(max(n, 0)) * period
    jitter = rng.normal(0.0, spec.timestamp_jitter_std, len(nominal)) if spec.timestamp_jitter_std > 0 \
        else np.zeros(len(nominal))
    jitter = np.clip(jitter, -JITTER_CLAMP * period, JITTER_CLAMP * period)
    t = np.round(nominal + jitter).astype(np.int64)
    return t[(t >= 0) & (t <= duration_us)]


def random_outages(rng: np.random.Generator, duration_us: int, fraction: float,
                   length_s: tuple[float, float]) -> list[tuple[int, int]]:
    """Outage intervals covering about ``fraction`` of ``[0, duration_us]`` on average."""
    if fraction <= 0:
        return []
    lo, hi = (int(round(v * 1e6)) for v in length_s)
    mean_len = 0.5 * (lo + hi)
    n = rng.poisson(fraction * duration_us / mean_len)
    starts = np.sort(rng.integers(0, duration_us, n))
    lengths = rng.integers(lo, hi + 1, n)
    return [(int(a), int(a + d)) for a, d in zip(starts, lengths)]


def shared_noise(group: str, shared_seed: int, t_us: np.ndarray) -> np.ndarray:
    """Unit-variance piecewise-constant 6-D process common to one noise group."""
    block = (np.asarray(t_us) // CORRELATION_BLOCK_US).astype(np.int64)
    key = zlib.crc32(group.encode()) & 0xFFFF_FFFF
    n_blocks = int(block.max()) + 1 if len(block) else 0
    table = np.random.default_rng([shared_seed, key]).standard_normal((n_blocks, 6))
    return table[block]


def sample_sensor(traj: Trajectory, spec: SensorSpec, seed: int, shared_seed: int | None = None
                  ) -> MeasurementStream:
    """Sample frames of one sensor and observe noisy relative poses between retained frames."""
    rng = np.random.default_rng([seed, spec.source_id])
    t = frame_times(spec, traj.duration_us, rng) + traj.times_us[0]
    keep = rng.random(len(t)) >= spec.dropout_prob
    dark = np.zeros(len(t), dtype=bool)
    for a, b in spec.outages:
        dark |= (t >= a) & (t <= b)
    # frames lost to an outage break the chain; isolated dropouts do not
    restart = np.cumsum(dark)[keep & ~dark]
    t = t[keep & ~dark]
    if len(t) < 2:
        raise ValueError(f"sensor {spec.source_id}: fewer than 2 frames at {spec.nominal_rate} Hz")
    pair = np.diff(restart) == 0
    if not pair.any():
        raise ValueError(f"sensor {spec.source_id}: no consecutive frame pair survives the outages")

    p, q = traj.sample(t)
    truth = relative_pose_batch(p[:-1], q[:-1], p[1:], q[1:])[pair]
    t_end = t[1:][pair]
    t_start = t[:-1][pair]
    mult = spec.noise_multiplier(t_end)

    white = rng.standard_normal((len(t_end), 6))
    rho = spec.noise_correlation if spec.noise_group else 0.0
    if rho > 0:
        common = shared_noise(spec.noise_group, seed if shared_seed is None else shared_seed, t_end)
        white = np.sqrt(rho) * common + np.sqrt(1.0 - rho) * white
    scale = np.array([spec.noise_std_translation] * 3 + [spec.noise_std_rotation] * 3)
    noise = white * scale * mult[:, None]

    obs = truth.copy()
    obs[:, :3] += noise[:, :3]
    if spec.noise_std_rotation > 0:
        # tangent-space perturbation: R_obs = R_true Exp(delta)
        q_obs = quat_mul(euler_to_quat(truth[:, 3:]), rotvec_to_quat(noise[:, 3:]))
        obs[:, 3:] = quat_to_euler(q_obs)
    return MeasurementStream(spec.source_id, int(t_start[0]), t_end, obs, mult, t_start)


def stream_truth(traj: Trajectory, stream: MeasurementStream) -> np.ndarray:
    """Ground-truth relative poses aligned with ``stream`` entries."""
    starts = stream.frame_starts_us
    p0, q0 = traj.sample(starts)
    p1, q1 = traj.sample(stream.timestamps_us)
    return relative_pose_batch(p0, q0, p1, q1)
