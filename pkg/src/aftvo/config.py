"""Run configuration: YAML file + flag overrides over desk-scale defaults.

Precedence is flags > file > defaults; unknown keys anywhere are an error.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

import yaml

from .aft.model import AftConfig
from .aft.train import TrainConfig
from .aft.windows import canonical_variant
from .sim.sensors import SensorSpec

SEED_ENV = "AFTVO_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class SensorConfig:
    source_id: int
    name: str = ""
    rate: float = 12.0
    phase_us: int = 0
    jitter_us: float = 2000.0
    noise_translation: float = 0.03
    noise_rotation: float = 0.003
    dropout: float = 0.05
    # (start_s, end_s, multiplier); seconds are relative to each sequence start
    degradation: list[list[float]] = field(default_factory=list)
    noise_group: str | None = None
    noise_correlation: float = 0.0
    # (start_s, end_s) intervals without frames, on top of any random outages
    outages: list[list[float]] = field(default_factory=list)

    def to_spec(self, extra_outages: list[tuple[int, int]] = ()) -> SensorSpec:
        windows = [(int(round(a * 1e6)), int(round(b * 1e6)), float(m)) for a, b, m in self.degradation]
        outages = [(int(round(a * 1e6)), int(round(b * 1e6))) for a, b in self.outages] + list(extra_outages)
        return SensorSpec(self.source_id, self.rate, self.phase_us, self.jitter_us, self.noise_translation,
                          self.noise_rotation, self.dropout, windows, self.noise_group, self.noise_correlation,
                          outages, self.name)


def default_sensors() -> list[SensorConfig]:
    return [SensorConfig(0, "F", 12.0, 3_000), SensorConfig(1, "L", 17.0, 11_000),
            SensorConfig(2, "R", 25.0, 7_000)]


@dataclass
class SimConfig:
    trajectory: str = "random_smooth"
    duration: float = 60.0
    n_train: int = 6
    n_val: int = 1
    n_test: int = 2
    query_rate: float = 10.0
    speed: float = 10.0
    speed_variation: float = 3.0
    yaw_rate_scale: float = 0.35
    # bursty frame loss: per-sensor expected fraction of time in outage, and outage length range (s)
    outage_fraction: float = 0.0
    outage_length: list[float] = field(default_factory=lambda: [0.2, 0.8])
    # test split only; None means same as outage_fraction
    test_outage_fraction: float | None = None
    sensors: list[SensorConfig] = field(default_factory=default_sensors)


@dataclass
class MdnConfig:
    # the estimators are fitted on the first `sequences` training sequences
    sequences: int = 6
    hidden: int = 64
    components: int = 3
    epochs: int = 8
    lr: float = 1e-3
    batch: int = 16
    seq_len: int = 32


@dataclass
class AftSection:
    layers: int = 2
    d_model: int = 64
    heads: int = 4
    ff_dim: int = 128
    step_us: int = 20_000
    rotation_weight: float = 100.0
    window_s: float = 2.0
    variant: str = "full"

    def model_config(self) -> AftConfig:
        window_us = int(round(self.window_s * 1e6))
        from .aft.discretiser import DiscretiserConfig
        max_bins = DiscretiserConfig.for_window(window_us, self.step_us).max_bins
        return AftConfig(self.d_model, self.heads, self.layers, self.ff_dim, self.step_us, max_bins,
                         self.rotation_weight, canonical_variant(self.variant))


@dataclass
class TrainingSection:
    lr: float = 5e-4
    batch: int = 16
    epochs: int = 30
    clip_norm: float = 5.0
    teacher_noise: float = 0.5

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.lr, self.batch, self.epochs, self.clip_norm, self.teacher_noise)


@dataclass
class AblationSection:
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    variants: list[str] = field(default_factory=lambda: ["full", "-D-Equi", "-D-None", "-SE"])
    subsets: list[list[str]] = field(default_factory=list)


@dataclass
class RunConfig:
    experiment: str = "aftvo"
    seed: int = 0
    output_dir: str = "runs/aftvo"
    simulator: SimConfig = field(default_factory=SimConfig)
    mdn: MdnConfig = field(default_factory=MdnConfig)
    aft: AftSection = field(default_factory=AftSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    ablation: AblationSection = field(default_factory=AblationSection)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def digest(self, sections=("simulator", "mdn", "aft")) -> str:
        """Hash of the sections that determine data and model compatibility."""
        d = self.to_dict()
        blob = json.dumps({k: d[k] for k in sections} | {"seed": self.seed}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def sensor_specs(self) -> list[SensorSpec]:
        return [s.to_spec() for s in self.simulator.sensors]


PAPER_SCALE = {"aft": {"layers": 4, "d_model": 512, "heads": 4, "ff_dim": 2048},
               "training": {"lr": 0.0005, "batch": 32}}


def _build(cls, data: Any, path: str):
    if not is_dataclass(cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown key(s) {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        sub = _SECTION_TYPES.get((cls.__name__, name))
        where = f"{path}.{name}" if path else name
        if sub is list:
            kwargs[name] = [_build(SensorConfig, v, f"{where}[{i}]") for i, v in enumerate(value)]
        elif sub is not None:
            kwargs[name] = _build(sub, value, where)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


_SECTION_TYPES = {
    ("RunConfig", "simulator"): SimConfig,
    ("RunConfig", "mdn"): MdnConfig,
    ("RunConfig", "aft"): AftSection,
    ("RunConfig", "training"): TrainingSection,
    ("RunConfig", "ablation"): AblationSection,
    ("SimConfig", "sensors"): list,
}


def deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(text: str) -> dict:
    """``a.b.c=value`` -> nested dict; value parsed as YAML."""
    key, sep, raw = text.partition("=")
    if not sep:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    value = yaml.safe_load(raw)
    out: dict = {}
    cur = out
    parts = key.strip().split(".")
    for p in parts[:-1]:
        cur = cur.setdefault(p, {})
    cur[parts[-1]] = value
    return out


def config_from_dict(data: dict | None) -> RunConfig:
    cfg = _build(RunConfig, data or {}, "")
    for name, section in (("aft", cfg.aft), ("training", cfg.training)):
        try:
            section.model_config() if name == "aft" else section.train_config()  # validates early
        except ValueError as exc:
            raise ConfigError(f"{name}: {exc}") from exc
    return cfg


def load_config(path: str | Path | None = None, overrides: list[str] = (), paper_scale: bool = False,
                env: dict | None = None, base: dict | None = None) -> RunConfig:
    """Layers, lowest first: defaults, ``base``, the file, paper-scale preset, overrides, AFTVO_SEED."""
    data: dict = copy.deepcopy(base) if base else {}
    if path is not None:
        file_data = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(file_data, dict):
            raise ConfigError("config file must contain a mapping")
        data = deep_merge(data, file_data)
    if paper_scale:
        data = deep_merge(data, PAPER_SCALE)
    for ov in overrides:
        data = deep_merge(data, parse_override(ov))
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        data["seed"] = int(env[SEED_ENV])
    return config_from_dict(data)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
