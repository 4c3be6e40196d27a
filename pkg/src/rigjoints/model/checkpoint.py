"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    8 bytes   magic b"RIGJCKPT"
    u32       format version
    u64       header length in bytes
    header    canonical JSON (sorted keys, compact separators), UTF-8
    blobs     f64 little-endian arrays, in the order listed in header["arrays"]

The header carries the model config, joint template, array names and
shapes, and any training state (optimizer step, scheduler, RNG). Nothing
time-dependent is stored, so identical state gives identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import __version__
from ..geometry import atomic_write_bytes
from ..numcore import ContractError
from .network import JointLocalizer, ModelConfig

MAGIC = b"RIGJCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, truncated or incompatible checkpoint."""


def _header_bytes(header: dict) -> bytes:
    return json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def encode_checkpoint(header: dict, arrays: dict[str, np.ndarray]) -> bytes:
    header = dict(header)
    header["arrays"] = [[name, list(np.shape(a))] for name, a in arrays.items()]
    header.setdefault("tool_version", __version__)
    hb = _header_bytes(header)
    parts = [MAGIC, struct.pack("<IQ", FORMAT_VERSION, len(hb)), hb]
    for a in arrays.values():
        parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_checkpoint(raw: bytes, source: str = "checkpoint") -> tuple[dict, dict[str, np.ndarray]]:
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{source}: not a rigjoints checkpoint (bad magic)")
    if len(raw) < 20:
        raise CheckpointError(f"{source}: truncated header")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{source}: unsupported format version {version}")
    try:
        header = json.loads(raw[20 : 20 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source}: corrupt header ({exc})") from None
    offset = 20 + hlen
    arrays: dict[str, np.ndarray] = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(raw):
            raise CheckpointError(f"{source}: truncated while reading {name}")
        arrays[name] = np.frombuffer(raw[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        offset = end
    if offset != len(raw):
        raise CheckpointError(f"{source}: {len(raw) - offset} trailing bytes")
    return header, arrays


def save_checkpoint(path: str | Path, header: dict, arrays: dict[str, np.ndarray]) -> None:
    atomic_write_bytes(path, encode_checkpoint(header, arrays))


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"{path}: no such checkpoint") from None
    return decode_checkpoint(raw, str(path))


@dataclass
class Checkpoint:
    header: dict
    arrays: dict[str, np.ndarray]

    @property
    def config(self) -> ModelConfig:
        return ModelConfig.from_json(self.header["model_config"])

    def build_model(self) -> JointLocalizer:
        model = JointLocalizer(self.config, seed=int(self.header.get("model_seed", 0)))
        model.load_state_arrays(self.arrays)
        return model.eval()


def model_header(model: JointLocalizer, skeleton=None) -> dict:
    header = {"model_config": model.config.to_json(), "model_seed": model.seed,
              "parameter_count": model.parameter_count()}
    if skeleton is not None:
        header["joints"] = {"names": list(skeleton.names), "parents": list(skeleton.parents),
                            "categories": list(skeleton.categories)}
    return header


def save_model(path: str | Path, model: JointLocalizer, skeleton=None, extra: dict | None = None,
               extra_arrays: dict[str, np.ndarray] | None = None) -> None:
    header = model_header(model, skeleton)
    header.update(extra or {})
    arrays = dict(model.state_arrays())
    for name, a in (extra_arrays or {}).items():
        if name in arrays:
            raise ContractError(f"extra array {name!r} clashes with a model array")
        arrays[name] = a
    save_checkpoint(path, header, arrays)


def load_model(path: str | Path) -> Checkpoint:
    header, arrays = load_checkpoint(path)
    if "model_config" not in header:
        raise CheckpointError(f"{path}: header has no model_config")
    return Checkpoint(header, arrays)
