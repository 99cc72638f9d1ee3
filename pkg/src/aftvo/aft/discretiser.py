"""Timestamp binning and the sinusoidal position table it indexes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class WindowTooLongError(ValueError):
    """A bin index does not fit the positional table."""


@dataclass(frozen=True)
class DiscretiserConfig:
    step_us: int = 20_000
    max_bins: int = 400

    def __post_init__(self):
        if self.step_us <= 0:
            raise ValueError("quantisation step must be positive")
        if self.max_bins < 1:
            raise ValueError("max_bins must be at least 1")

    @classmethod
    def for_window(cls, window_us: int, step_us: int = 20_000, headroom: int = 4) -> "DiscretiserConfig":
        return cls(step_us, headroom * (math.ceil(window_us / step_us) + 1))


def discretise(t_us, window_times_us, cfg: DiscretiserConfig) -> np.ndarray:
    """Bin index floor((t - min(window)) / Z) for each timestamp in ``t_us``."""
    t = np.asarray(t_us, dtype=np.int64)
    origin = int(np.min(window_times_us))
    if np.any(t < origin):
        raise ValueError("timestamp precedes the window minimum")
    d = (t - origin) // cfg.step_us
    if np.any(d >= cfg.max_bins):
        raise WindowTooLongError(f"bin {int(d.max())} >= max_bins {cfg.max_bins}")
    return d


def sinusoid_table(max_bins: int, d_model: int) -> np.ndarray:
    """PE[d, 2i] = sin(d / 10000^(2i/D)), PE[d, 2i+1] = cos(same)."""
    pos = np.arange(max_bins)[:, None]
    i = np.arange(0, d_model, 2)
    angle = pos / np.power(10000.0, i / d_model)
    table = np.zeros((max_bins, d_model))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return table


def positional_encode(d, table: np.ndarray) -> np.ndarray:
    d = np.asarray(d)
    if np.any(d < 0) or np.any(d >= len(table)):
        raise WindowTooLongError(f"bin index outside table of {len(table)} rows")
    return table[d]
