"""Absolute trajectories: composition from relative poses and TUM-format files."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..sim.pose import Pose, euler_to_quat, quat_mul, quat_normalize, quat_rotate, relative_pose_batch


@dataclass
class PoseTrajectory:
    timestamps_us: np.ndarray  # (n,)
    positions: np.ndarray      # (n, 3)
    quats: np.ndarray          # (n, 4) as (w, x, y, z)

    def __post_init__(self):
        self.timestamps_us = np.asarray(self.timestamps_us, dtype=np.int64)
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        q = np.asarray(self.quats, dtype=float).reshape(-1, 4)
        # leave already-unit quaternions bit-exact so file round trips are lossless
        if q.size and np.max(np.abs(np.linalg.norm(q, axis=1) - 1.0)) > 1e-12:
            q = quat_normalize(q)
        self.quats = q
        if np.any(np.diff(self.timestamps_us) <= 0):
            raise ValueError("trajectory timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.timestamps_us)

    def pose(self, i: int) -> Pose:
        return Pose(self.positions[i], self.quats[i])

    def relatives(self) -> np.ndarray:
        """(n-1, 6) relative poses between consecutive entries."""
        return relative_pose_batch(self.positions[:-1], self.quats[:-1], self.positions[1:], self.quats[1:])

    def transformed(self, pose: Pose) -> "PoseTrajectory":
        """Left-multiply every pose by ``pose``."""
        q = np.broadcast_to(pose.quat, self.quats.shape)
        return PoseTrajectory(self.timestamps_us, pose.translation + quat_rotate(q, self.positions),
                              quat_mul(q, self.quats))

    def select(self, stamps_us) -> "PoseTrajectory":
        idx = np.searchsorted(self.timestamps_us, stamps_us)
        if np.any(idx >= len(self)) or np.any(self.timestamps_us[np.minimum(idx, len(self) - 1)] != stamps_us):
            raise KeyError("requested stamps are not all present")
        return PoseTrajectory(self.timestamps_us[idx], self.positions[idx], self.quats[idx])


def compose_trajectory(timestamps_us, relatives, start: Pose | None = None, start_us: int = 0) -> PoseTrajectory:
    """Chain ``start`` with each relative pose; entry i ends at ``timestamps_us[i]``."""
    start = Pose.identity() if start is None else start
    rel = np.asarray(relatives, dtype=float).reshape(-1, 6)
    stamps = np.concatenate([[start_us], np.asarray(timestamps_us, dtype=np.int64)])
    pos = np.zeros((len(rel) + 1, 3))
    quats = np.zeros((len(rel) + 1, 4))
    pos[0], quats[0] = start.translation, start.quat
    rq = euler_to_quat(rel[:, 3:]) if len(rel) else np.zeros((0, 4))
    for i in range(len(rel)):
        pos[i + 1] = pos[i] + quat_rotate(quats[i], rel[i, :3])
        quats[i + 1] = quat_normalize(quat_mul(quats[i], rq[i]))
    return PoseTrajectory(stamps, pos, quats)


def from_simulation(traj, stamps_us) -> PoseTrajectory:
    p, q = traj.sample(stamps_us)
    return PoseTrajectory(stamps_us, p, q)


def save_tum(traj: PoseTrajectory, path: str | Path) -> None:
    """``timestamp_s tx ty tz qx qy qz qw`` per line."""
    lines = []
    for t, p, q in zip(traj.timestamps_us, traj.positions, traj.quats):
        sec, usec = divmod(int(t), 1_000_000)
        vals = " ".join(repr(float(v)) for v in (*p, q[1], q[2], q[3], q[0]))
        lines.append(f"{sec}.{usec:06d} {vals}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_tum(path: str | Path) -> PoseTrajectory:
    stamps, pos, quats = [], [], []
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        f = line.split()
        sec, _, frac = f[0].partition(".")
        stamps.append(int(sec) * 1_000_000 + int((frac + "000000")[:6]))
        vals = [float(v) for v in f[1:8]]
        pos.append(vals[:3])
        quats.append([vals[6], vals[3], vals[4], vals[5]])
    return PoseTrajectory(np.array(stamps, dtype=np.int64), np.array(pos), np.array(quats))
