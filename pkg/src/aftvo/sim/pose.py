"""Rigid-body poses: unit quaternions (w, x, y, z) plus translation.

Euler angles follow the intrinsic z-y-x convention, stored as
``(roll_x, pitch_y, yaw_z)`` so that ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``.
A relative pose is the 6-vector ``(tx, ty, tz, roll, pitch, yaw)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def quat_mul(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    pw, px, py, pz = np.moveaxis(np.asarray(p, dtype=float), -1, 0)
    qw, qx, qy, qz = np.moveaxis(np.asarray(q, dtype=float), -1, 0)
    return np.stack([
        pw * qw - px * qx - py * qy - pz * qz,
        pw * qx + px * qw + py * qz - pz * qy,
        pw * qy - px * qz + py * qw + pz * qx,
        pw * qz + px * qy - py * qx + pz * qw,
    ], axis=-1)


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.asarray(q, dtype=float) * np.array([1.0, -1.0, -1.0, -1.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    # canonical hemisphere, w >= 0
    return np.where(q[..., :1] < 0, -q, q)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=float), -1, 0)
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], -2)


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,...j->...i", quat_to_matrix(q), v)


def euler_to_quat(euler: np.ndarray) -> np.ndarray:
    """(roll, pitch, yaw) -> quaternion of Rz(yaw) Ry(pitch) Rx(roll)."""
    e = np.asarray(euler, dtype=float)
    hr, hp, hy = e[..., 0] / 2, e[..., 1] / 2, e[..., 2] / 2
    cr, sr, cp, sp, cy, sy = np.cos(hr), np.sin(hr), np.cos(hp), np.sin(hp), np.cos(hy), np.sin(hy)
    q = np.stack([
        cy * cp * cr + sy * sp * sr,
        cy * cp * sr - sy * sp * cr,
        cy * sp * cr + sy * cp * sr,
        sy * cp * cr - cy * sp * sr,
    ], axis=-1)
    return quat_normalize(q)


def quat_to_euler(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.moveaxis(quat_normalize(q), -1, 0)
    roll = np.arctan2(2 * (w * x + y * z), 1 - 2 * (x * x + y * y))
    pitch = np.arcsin(np.clip(2 * (w * y - z * x), -1.0, 1.0))
    yaw = np.arctan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))
    return np.stack([roll, pitch, yaw], axis=-1)


def rotvec_to_quat(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    angle = np.linalg.norm(v, axis=-1, keepdims=True)
    half = angle / 2
    # sin(a/2)/a -> 1/2 as a -> 0
    k = np.where(angle > 1e-12, np.sin(half) / np.where(angle > 1e-12, angle, 1.0), 0.5 - angle ** 2 / 48)
    return quat_normalize(np.concatenate([np.cos(half), v * k], axis=-1))


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    q = quat_normalize(q)
    w = np.clip(q[..., :1], -1.0, 1.0)
    s = np.linalg.norm(q[..., 1:], axis=-1, keepdims=True)
    angle = 2 * np.arctan2(s, w)
    k = np.where(s > 1e-12, angle / np.where(s > 1e-12, s, 1.0), 2.0)
    return q[..., 1:] * k


def slerp(q0: np.ndarray, q1: np.ndarray, frac: np.ndarray) -> np.ndarray:
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    dot = np.sum(q0 * q1, axis=-1, keepdims=True)
    q1 = np.where(dot < 0, -q1, q1)
    delta = quat_to_rotvec(quat_mul(quat_conj(q0), q1))
    return quat_mul(q0, rotvec_to_quat(delta * np.asarray(frac, dtype=float)[..., None]))


@dataclass(frozen=True)
class Pose:
    translation: np.ndarray
    quat: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))
        object.__setattr__(self, "quat", quat_normalize(np.asarray(self.quat, dtype=float).reshape(4)))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_vec6(cls, vec) -> "Pose":
        vec = np.asarray(vec, dtype=float)
        return cls(vec[:3], euler_to_quat(vec[3:6]))

    def to_vec6(self) -> np.ndarray:
        return np.concatenate([self.translation, quat_to_euler(self.quat)])

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.quat)

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.translation + quat_rotate(self.quat, other.translation),
                    quat_mul(self.quat, other.quat))

    def inverse(self) -> "Pose":
        qi = quat_conj(self.quat)
        return Pose(-quat_rotate(qi, self.translation), qi)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


def relative_pose(a: Pose, b: Pose) -> np.ndarray:
    """Motion from ``a`` to ``b`` expressed in frame ``a``, as a 6-vector."""
    return a.inverse().compose(b).to_vec6()


def relative_pose_batch(ta: np.ndarray, qa: np.ndarray, tb: np.ndarray, qb: np.ndarray) -> np.ndarray:
    """Vectorised :func:`relative_pose` over leading axes."""
    qai = quat_conj(qa)
    t = quat_rotate(qai, tb - ta)
    q = quat_mul(qai, qb)
    return np.concatenate([t, quat_to_euler(q)], axis=-1)
