"""Self-describing checkpoint files.

Layout: the magic line ``AFTVO-CKPT\\n``, an 8-byte little-endian header
length, a UTF-8 JSON header (format version, step, config snapshot, tensor
table) and then every tensor as raw little-endian float64 in table order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"AFTVO-CKPT\n"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    arrays: dict[str, np.ndarray]
    config: dict[str, Any] = field(default_factory=dict)
    step: int = 0
    meta: dict[str, Any] = field(default_factory=dict)

    def subset(self, prefix: str) -> dict[str, np.ndarray]:
        n = len(prefix)
        return {k[n:]: v for k, v in self.arrays.items() if k.startswith(prefix)}


def to_bytes(ckpt: Checkpoint) -> bytes:
    table, blobs, offset = [], [], 0
    for name, arr in ckpt.arrays.items():
        a = np.asarray(arr, dtype="<f8", order="C")
        table.append({"name": name, "shape": list(a.shape), "offset": offset, "count": int(a.size)})
        blobs.append(a.tobytes())
        offset += a.size
    header = json.dumps({"format_version": FORMAT_VERSION, "step": ckpt.step, "config": ckpt.config,
                         "meta": ckpt.meta, "tensors": table}, sort_keys=True).encode()
    return MAGIC + struct.pack("<Q", len(header)) + header + b"".join(blobs)


def from_bytes(data: bytes) -> Checkpoint:
    if not data.startswith(MAGIC):
        raise CheckpointError("not an aftvo checkpoint")
    pos = len(MAGIC)
    (hlen,) = struct.unpack("<Q", data[pos:pos + 8])
    pos += 8
    header = json.loads(data[pos:pos + hlen].decode())
    pos += hlen
    if header["format_version"] != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header['format_version']}")
    flat = np.frombuffer(data[pos:], dtype="<f8")
    arrays = {}
    for entry in header["tensors"]:
        if entry["name"] in arrays:
            raise CheckpointError(f"duplicate tensor name {entry['name']}")
        chunk = flat[entry["offset"]:entry["offset"] + entry["count"]]
        arrays[entry["name"]] = chunk.astype(np.float64).reshape(tuple(entry["shape"]))
    return Checkpoint(arrays, header["config"], header["step"], header["meta"])


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
