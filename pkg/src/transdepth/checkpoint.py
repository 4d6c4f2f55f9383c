"""Checkpoint files.

Byte layout (all integers little-endian)::

    offset 0   4 bytes   magic b"TDCK"
    offset 4   u32       format version (currently 1)
    offset 8   u64       manifest length M in bytes
    offset 16  M bytes   UTF-8 JSON manifest
    offset 16+M          float32 payload, little-endian

The manifest is ``{"format_version", "step", "config", "parameters"}`` where
``parameters`` lists ``{"name", "shape", "offset", "count"}`` in model order;
``offset`` and ``count`` are in float32 elements from the payload start.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from transdepth.config import RunConfig, parse_config
from transdepth.errors import FormatError
from transdepth.model import TransDepth

MAGIC = b"TDCK"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQ")


@dataclass
class Checkpoint:
    config: RunConfig
    params: dict[str, np.ndarray]  # float32
    step: int = 0

    @classmethod
    def from_model(cls, model: TransDepth, config: RunConfig, step: int = 0) -> "Checkpoint":
        return cls(config, {k: v.astype("<f4") for k, v in model.state_dict().items()}, step)

    def build_model(self) -> TransDepth:
        model = TransDepth(self.config.model, seed=self.config.training.seed)
        model.load_state_dict({k: v.astype(np.float64) for k, v in self.params.items()})
        return model

    def manifest(self) -> dict:
        entries, offset = [], 0
        for name, arr in self.params.items():
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
            offset += int(arr.size)
        return {
            "format_version": FORMAT_VERSION,
            "step": self.step,
            "config": self.config.to_json(),
            "parameters": entries,
        }

    def to_bytes(self) -> bytes:
        manifest = json.dumps(self.manifest(), separators=(",", ":")).encode("utf-8")
        payload = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in self.params.values())
        return _HEADER.pack(MAGIC, FORMAT_VERSION, len(manifest)) + manifest + payload


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(ckpt.to_bytes())
    return path


def checkpoint_from_bytes(blob: bytes) -> Checkpoint:
    if len(blob) < _HEADER.size:
        raise FormatError("checkpoint truncated before header end")
    magic, version, m_len = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint format version {version}")
    start = _HEADER.size
    if len(blob) < start + m_len:
        raise FormatError("checkpoint truncated inside manifest")
    try:
        manifest = json.loads(blob[start : start + m_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint manifest ({exc})") from None
    payload = np.frombuffer(blob, dtype="<f4", offset=start + m_len)
    params = {}
    for entry in manifest["parameters"]:
        lo, n = entry["offset"], entry["count"]
        if lo + n > payload.size or int(np.prod(entry["shape"], dtype=np.int64)) != n:
            raise FormatError(f"parameter {entry['name']} lies outside the payload")
        params[entry["name"]] = payload[lo : lo + n].reshape(entry["shape"]).copy()
    expected = sum(e["count"] for e in manifest["parameters"])
    if expected != payload.size:
        raise FormatError(f"payload holds {payload.size} floats, manifest declares {expected}")
    return Checkpoint(parse_config(manifest["config"]), params, int(manifest.get("step", 0)))


def load_checkpoint(path: str | Path) -> Checkpoint:
    return checkpoint_from_bytes(Path(path).read_bytes())
