"""Fusion windows: the items and queries of one time interval, and their batching."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..sim.pose import relative_pose_batch
from ..sim.trajectory import Trajectory
from .discretiser import DiscretiserConfig, discretise

VARIANTS = ("full", "no_discretiser_equidistant", "no_time", "no_source")
VARIANT_ALIASES = {"-D-Equi": "no_discretiser_equidistant", "-D-None": "no_time", "-SE": "no_source",
                   "aft": "full"}


def canonical_variant(tag: str) -> str:
    tag = VARIANT_ALIASES.get(tag, tag)
    if tag not in VARIANTS:
        raise ValueError(f"unknown ablation variant {tag!r}; expected one of {VARIANTS}")
    return tag


@dataclass
class FusionWindow:
    """Items sorted by (timestamp, source_id); queries t_1..t_U after anchor t_0."""

    source_ids: np.ndarray      # (N,)
    timestamps_us: np.ndarray   # (N,)
    payload: np.ndarray         # (N, P)
    anchor_us: int
    query_us: np.ndarray        # (U,)
    targets: np.ndarray | None = None  # (U, 6) relative pose over (t_{u-1}, t_u)

    def __post_init__(self):
        order = np.lexsort((self.source_ids, self.timestamps_us))
        self.source_ids = np.asarray(self.source_ids, dtype=np.int64)[order]
        self.timestamps_us = np.asarray(self.timestamps_us, dtype=np.int64)[order]
        self.payload = np.asarray(self.payload, dtype=float)[order]
        self.query_us = np.asarray(self.query_us, dtype=np.int64)
        if len(self.query_us) < 1 or np.any(np.diff(self.query_us) <= 0) or self.query_us[0] <= self.anchor_us:
            raise ValueError("queries must be strictly increasing and follow the anchor")
        if len(self.source_ids) < 1:
            raise ValueError("empty window")
        if not np.all(np.isfinite(self.payload)):
            raise ValueError("non-finite payload")

    @property
    def window_times(self) -> np.ndarray:
        return np.concatenate([[self.anchor_us], self.timestamps_us])

    def positions(self, variant: str, cfg: DiscretiserConfig) -> tuple[np.ndarray, np.ndarray]:
        """Positional indices for items and queries under ``variant``."""
        if variant == "no_discretiser_equidistant":
            return np.arange(len(self.source_ids)), np.arange(len(self.query_us))
        wt = self.window_times
        return discretise(self.timestamps_us, wt, cfg), discretise(self.query_us, wt, cfg)

    def shifted(self, dt_us: int) -> "FusionWindow":
        return FusionWindow(self.source_ids, self.timestamps_us + dt_us, self.payload,
                            self.anchor_us + dt_us, self.query_us + dt_us, self.targets)

    def restrict(self, sources) -> "FusionWindow | None":
        keep = np.isin(self.source_ids, list(sources))
        if not keep.any():
            return None
        return FusionWindow(self.source_ids[keep], self.timestamps_us[keep], self.payload[keep],
                            self.anchor_us, self.query_us, self.targets)


def query_grid(t_start_us: int, t_end_us: int, rate_hz: float) -> np.ndarray:
    period = 1e6 / rate_hz
    k0 = int(np.ceil(t_start_us / period))
    k1 = int(np.floor(t_end_us / period))
    return np.round(np.arange(k0, k1 + 1) * period).astype(np.int64)


def target_poses(traj: Trajectory, anchor_us: int, query_us: np.ndarray) -> np.ndarray:
    stamps = np.concatenate([[anchor_us], query_us])
    p, q = traj.sample(stamps)
    return relative_pose_batch(p[:-1], q[:-1], p[1:], q[1:])


def make_windows(item_times: list[np.ndarray], item_sources: list[np.ndarray], item_payloads: list[np.ndarray],
                 grid_us: np.ndarray, queries_per_window: int, stride: int,
                 traj: Trajectory | None = None) -> list[FusionWindow]:
    """Cut merged item streams into windows of ``queries_per_window`` query intervals.

    Window ``w`` covers grid stamps ``grid[s], ..., grid[s+U]`` with
    ``s = w * stride``; items with timestamps in ``[grid[s], grid[s+U]]`` are kept.
    """
    times = np.concatenate(item_times)
    sources = np.concatenate(item_sources)
    payload = np.concatenate(item_payloads)
    windows = []
    U = queries_per_window
    for s in range(0, len(grid_us) - U, stride):
        anchor, queries = int(grid_us[s]), grid_us[s + 1:s + U + 1]
        inside = (times >= anchor) & (times <= queries[-1])
        if not inside.any():
            continue
        targets = target_poses(traj, anchor, queries) if traj is not None else None
        windows.append(FusionWindow(sources[inside], times[inside], payload[inside], anchor, queries, targets))
    return windows


@dataclass
class WindowBatch:
    payload: np.ndarray       # (B, N, P)
    sources: np.ndarray       # (B, N)
    item_pos: np.ndarray      # (B, N)
    item_valid: np.ndarray    # (B, N) bool
    query_pos: np.ndarray     # (B, U)
    query_valid: np.ndarray   # (B, U) bool
    targets: np.ndarray | None  # (B, U, 6)

    @property
    def size(self) -> int:
        return self.payload.shape[0]


def collate(windows: list[FusionWindow], variant: str, cfg: DiscretiserConfig) -> WindowBatch:
    B = len(windows)
    N = max(len(w.source_ids) for w in windows)
    U = max(len(w.query_us) for w in windows)
    P = windows[0].payload.shape[1]
    payload = np.zeros((B, N, P))
    sources = np.zeros((B, N), dtype=np.int64)
    item_pos = np.zeros((B, N), dtype=np.int64)
    item_valid = np.zeros((B, N), dtype=bool)
    query_pos = np.zeros((B, U), dtype=np.int64)
    query_valid = np.zeros((B, U), dtype=bool)
    has_targets = all(w.targets is not None for w in windows)
    targets = np.zeros((B, U, 6)) if has_targets else None
    for b, w in enumerate(windows):
        n, u = len(w.source_ids), len(w.query_us)
        ip, qp = w.positions(variant, cfg)
        payload[b, :n] = w.payload
        sources[b, :n] = w.source_ids
        item_pos[b, :n] = ip
        item_valid[b, :n] = True
        query_pos[b, :u] = qp
        query_valid[b, :u] = True
        if has_targets:
            targets[b, :u] = w.targets
    return WindowBatch(payload, sources, item_pos, item_valid, query_pos, query_valid, targets)
