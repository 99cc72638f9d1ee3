"""Line-oriented text dump/load for measurement streams.

Layout::

    # aftvo-stream 1 source_id=<k> first_frame_us=<t>
    # source_id timestamp_us tx ty tz ex ey ez noise_scale
    0 83333 0.8333 0.0 ...
    # restart frame_us=<t>
    0 ...

A ``# restart`` line marks an entry whose motion starts at frame ``t``
rather than at the previous entry's timestamp (the sensor re-initialised
after an outage).

Euler angles are (roll, pitch, yaw) in radians.  Floats are written with
``repr`` so a load/dump cycle is lossless.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .sensors import MeasurementStream

FORMAT_VERSION = 1
MAGIC = "# aftvo-stream"
RESTART = "# restart"
COLUMNS = "# source_id timestamp_us tx ty tz ex ey ez noise_scale"


class StreamFormatError(ValueError):
    pass


def dumps_stream(stream: MeasurementStream) -> str:
    lines = [f"{MAGIC} {FORMAT_VERSION} source_id={stream.source_id} first_frame_us={stream.first_frame_us}",
             COLUMNS]
    restarts = set(stream.restarts.tolist())
    starts = stream.frame_starts_us
    for n, (t, obs, s) in enumerate(zip(stream.timestamps_us, stream.observations, stream.noise_scale)):
        if n in restarts:
            lines.append(f"{RESTART} frame_us={int(starts[n])}")
        vals = " ".join(repr(float(v)) for v in obs)
        lines.append(f"{stream.source_id} {int(t)} {vals} {float(s)!r}")
    return "\n".join(lines) + "\n"


def loads_stream(text: str) -> MeasurementStream:
    lines = text.splitlines()
    if not lines or not lines[0].startswith(MAGIC):
        raise StreamFormatError("missing stream header")
    head = lines[0][len(MAGIC):].split()
    if int(head[0]) != FORMAT_VERSION:
        raise StreamFormatError(f"unsupported stream format version {head[0]}")
    meta = dict(tok.split("=", 1) for tok in head[1:])
    source_id = int(meta["source_id"])
    ts, obs, scale, starts = [], [], [], []
    next_start = int(meta["first_frame_us"])
    for lineno, line in enumerate(lines[1:], start=2):
        if line.startswith(RESTART):
            try:
                next_start = int(line.split("=", 1)[1])
            except (IndexError, ValueError) as exc:
                raise StreamFormatError(f"line {lineno}: malformed restart marker") from exc
            continue
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 9:
            raise StreamFormatError(f"line {lineno}: expected 9 fields, got {len(parts)}")
        if int(parts[0]) != source_id:
            raise StreamFormatError(f"line {lineno}: source id {parts[0]} != header {source_id}")
        ts.append(int(parts[1]))
        obs.append([float(v) for v in parts[2:8]])
        scale.append(float(parts[8]))
        starts.append(next_start)
        next_start = ts[-1]
    try:
        return MeasurementStream(source_id, int(meta["first_frame_us"]), np.array(ts, dtype=np.int64),
                                 np.array(obs).reshape(-1, 6), np.array(scale), np.array(starts, dtype=np.int64))
    except ValueError as exc:
        raise StreamFormatError(str(exc)) from exc


def save_stream(stream: MeasurementStream, path: str | Path) -> None:
    Path(path).write_text(dumps_stream(stream))


def load_stream(path: str | Path) -> MeasurementStream:
    return loads_stream(Path(path).read_text())
