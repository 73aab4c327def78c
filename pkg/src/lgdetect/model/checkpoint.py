"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    offset  size  content
    0       8     magic  b"LGDCKPT\\0"
    8       4     uint32 format version (currently 1)
    12      8     uint64 header length H in bytes
    20      H     UTF-8 JSON header, keys sorted, no whitespace
    20+H    8*n   float64 parameter payload, segments in header order

The header holds ``net`` (architecture fields), ``spec`` (model spec),
``meta`` (training-state metadata) and ``segments``: a list of
``{"name", "shape", "offset", "count"}`` where ``offset``/``count`` are in
float64 elements relative to the payload start.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .network import TinyNet

MAGIC = b"LGDCKPT\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    net: TinyNet
    theta: np.ndarray
    spec: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        segments = [
            {"name": n, "shape": list(s), "offset": o, "count": int(np.prod(s))} for n, s, o in self.net.segments()
        ]
        header = {"net": asdict(self.net), "spec": self.spec, "meta": self.meta, "segments": segments}
        hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        payload = np.ascontiguousarray(self.theta, dtype="<f8").tobytes()
        return MAGIC + struct.pack("<IQ", VERSION, len(hb)) + hb + payload

    @classmethod
    def from_bytes(cls, data: bytes) -> Checkpoint:
        if data[:8] != MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        if len(data) < 20:
            raise CheckpointError("truncated checkpoint header")
        version, hlen = struct.unpack("<IQ", data[8:20])
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        if len(data) < 20 + hlen:
            raise CheckpointError("truncated checkpoint header")
        try:
            header = json.loads(data[20 : 20 + hlen].decode("utf-8"))
            net = TinyNet(**header["net"])
        except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
        payload = data[20 + hlen :]
        if len(payload) != 8 * net.size:
            raise CheckpointError(f"payload holds {len(payload) // 8} values, architecture needs {net.size}")
        for seg, (name, shape, off) in zip(header["segments"], net.segments()):
            if seg["name"] != name or tuple(seg["shape"]) != shape or seg["offset"] != off:
                raise CheckpointError(f"segment {seg['name']!r} does not match the architecture")
        theta = np.frombuffer(payload, dtype="<f8").astype(np.float64)
        return cls(net, theta, header["spec"], header["meta"])


def save_checkpoint(path: str | os.PathLike, ckpt: Checkpoint) -> None:
    with open(path, "wb") as fh:
        fh.write(ckpt.to_bytes())


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    with open(path, "rb") as fh:
        return Checkpoint.from_bytes(fh.read())
