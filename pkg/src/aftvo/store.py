"""On-disk layout of generated data, run manifests and model checkpoints.

A data directory holds ``manifest.yaml`` and one folder per sequence with
``stream_<k>.txt`` files and a 1 kHz ``truth.tum`` reference.  Checkpoint
arrays are namespaced ``mdn.<k>.``, ``aft.`` and ``optim.``; fitted
normalisation statistics live under ``<model>.buffer.``.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .aft import AftConfig, FusionTransformer
from .checkpoint import Checkpoint, CheckpointError
from .config import RunConfig, config_from_dict
from .eval.trajectory import PoseTrajectory, load_tum, save_tum
from .mdn import MdnEstimator
from .numerics import Adam
from .pipeline import SPLITS, Sequence
from .sim import Trajectory, load_stream, save_stream

MANIFEST = "manifest.yaml"


class DataMismatchError(ValueError):
    """Checkpoint, config and data were produced from different settings."""


def data_digest(cfg: RunConfig) -> str:
    """Hash of everything that determines the generated streams."""
    return cfg.digest(sections=("simulator",))


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(directory: str | Path, kind: str, cfg: RunConfig, **fields) -> Path:
    """Deterministic YAML manifest: same run, same bytes."""
    doc = {"kind": kind, "aftvo_version": __version__, "seed": cfg.seed, "data_digest": data_digest(cfg),
           "config_digest": cfg.digest(), **fields, "config": cfg.to_dict()}
    path = Path(directory) / MANIFEST
    path.write_text(yaml.safe_dump(json.loads(json.dumps(doc)), sort_keys=False))
    return path


def read_manifest(directory: str | Path) -> dict:
    path = Path(directory) / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"no {MANIFEST} in {directory}")
    return yaml.safe_load(path.read_text())


# -- sequences --------------------------------------------------------------------------

def save_sequence(seq: Sequence, root: str | Path) -> list[Path]:
    folder = Path(root) / seq.name
    folder.mkdir(parents=True, exist_ok=True)
    paths = []
    for s in seq.streams:
        p = folder / f"stream_{s.source_id}.txt"
        save_stream(s, p)
        paths.append(p)
    truth = folder / "truth.tum"
    save_tum(PoseTrajectory(seq.traj.times_us, seq.traj.positions, seq.traj.quats), truth)
    return paths + [truth]


def load_sequence(root: str | Path, split: str, index: int, seed: int, source_ids) -> Sequence:
    folder = Path(root) / f"{split}_{index:03d}"
    streams = [load_stream(folder / f"stream_{k}.txt") for k in source_ids]
    gt = load_tum(folder / "truth.tum")
    return Sequence(split, index, seed, Trajectory(gt.timestamps_us, gt.positions, gt.quats), streams)


def save_dataset(sequences: dict[str, list[Sequence]], cfg: RunConfig, root: str | Path) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    files = {}
    for split in SPLITS:
        for seq in sequences.get(split, []):
            for p in save_sequence(seq, root):
                files[str(p.relative_to(root))] = sha256_file(p)
    counts = {s: len(sequences.get(s, [])) for s in SPLITS}
    seeds = {s: [q.seed for q in sequences.get(s, [])] for s in SPLITS}
    return write_manifest(root, "data", cfg, splits=counts, sequence_seeds=seeds, files=files)


def load_dataset(root: str | Path, splits=tuple(SPLITS)) -> tuple[RunConfig, dict[str, list[Sequence]]]:
    """Sequences and the generating config recorded in the data manifest."""
    man = read_manifest(root)
    if man.get("kind") != "data":
        raise DataMismatchError(f"{root} is not a data directory")
    cfg = config_from_dict(man["config"])
    if data_digest(cfg) != man["data_digest"]:
        raise DataMismatchError("data manifest digest does not match its own config")
    ids = [s.source_id for s in cfg.simulator.sensors]
    out = {}
    for split in splits:
        seeds = man["sequence_seeds"][split]
        out[split] = [load_sequence(root, split, i, seed, ids) for i, seed in enumerate(seeds)]
    return cfg, out


# -- models <-> checkpoint arrays ---------------------------------------------------------

def model_arrays(mdns: dict[int, MdnEstimator], fusion: FusionTransformer | None = None,
                 optimizer: Adam | None = None) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    for k in sorted(mdns):
        for name, arr in mdns[k].state_dict().items():
            arrays[f"mdn.{k}.{name}"] = arr
        for name, arr in mdns[k].buffers().items():
            arrays[f"mdn.{k}.buffer.{name}"] = np.asarray(arr, dtype=float)
    if fusion is not None:
        for name, arr in fusion.state_dict().items():
            arrays[f"aft.{name}"] = arr
        for name, arr in fusion.buffers().items():
            arrays[f"aft.buffer.{name}"] = np.asarray(arr, dtype=float)
    if optimizer is not None:
        for name, arr in optimizer.state().items():
            arrays[f"optim.{name}"] = arr
    return arrays


def _split_buffers(arrays: dict[str, np.ndarray]) -> tuple[dict, dict]:
    params = {k: v for k, v in arrays.items() if not k.startswith("buffer.")}
    bufs = {k[len("buffer."):]: v for k, v in arrays.items() if k.startswith("buffer.")}
    return params, bufs


def restore_mdns(ckpt: Checkpoint) -> dict[int, MdnEstimator]:
    cfg = config_from_dict(ckpt.config)
    out = {}
    for sensor in cfg.simulator.sensors:
        k = sensor.source_id
        arrays = ckpt.subset(f"mdn.{k}.")
        if not arrays:
            raise CheckpointError(f"checkpoint has no estimator for source {k}")
        model = MdnEstimator(cfg.mdn.hidden, cfg.mdn.components, seed=0)
        params, bufs = _split_buffers(arrays)
        model.load_state_dict(params)
        model.load_buffers(bufs)
        out[k] = model
    return out


def restore_fusion(ckpt: Checkpoint) -> FusionTransformer:
    meta = ckpt.meta
    if "aft_config" not in meta:
        raise CheckpointError("checkpoint has no fusion model")
    aft_cfg = AftConfig(**meta["aft_config"])
    model = FusionTransformer(aft_cfg, meta["n_sources"], meta["payload_dim"], seed=0)
    params, bufs = _split_buffers(ckpt.subset("aft."))
    model.load_state_dict(params)
    model.load_buffers(bufs)
    return model


def restore_optimizer(ckpt: Checkpoint, model: FusionTransformer, lr: float) -> Adam:
    opt = Adam(model.parameters(), lr=lr)
    state = ckpt.subset("optim.")
    if state:
        opt.load_state(state)
    return opt


def fusion_meta(model: FusionTransformer) -> dict:
    return {"aft_config": model.cfg.to_dict(), "n_sources": model.n_sources, "payload_dim": model.payload_dim}


def checkpoint_config(ckpt: Checkpoint) -> RunConfig:
    return config_from_dict(ckpt.config)
