"""Checkpoint files.

Layout (little-endian)::

    b"VPGANCKP"            magic
    u32                    format version
    u32 + utf-8 text       JSON header: network specs, array shapes, metadata
    f64 * N                every parameter/state array, in header order
    u32                    CRC32 of all preceding bytes
"""
from __future__ import annotations

import json
import math
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from vpgan.nn import ArchitectureSpec, NetworkParams

MAGIC = b"VPGANCKP"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    networks: dict[str, NetworkParams]
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def atomic_write_bytes(path, payload: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    header = {"networks": [], "arrays": [], "meta": ckpt.meta}
    blocks = []
    for name, params in ckpt.networks.items():
        header["networks"].append({"name": name, "spec": json.loads(params.spec.to_json()), "size": params.count()})
        blocks.append(params.flat())
    for name, arr in ckpt.arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        header["arrays"].append({"name": name, "shape": list(arr.shape)})
        blocks.append(arr.ravel())
    text = json.dumps(header, sort_keys=True).encode("utf-8")
    body = np.concatenate(blocks).astype("<f8").tobytes() if blocks else b""
    payload = MAGIC + struct.pack("<II", VERSION, len(text)) + text + body
    return payload + struct.pack("<I", zlib.crc32(payload))


def decode_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < len(MAGIC) + 12:
        raise CheckpointError(f"file too short ({len(data)} bytes)")
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("bad magic bytes, not a checkpoint")
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != crc:
        raise CheckpointError("CRC mismatch, checkpoint is corrupt or truncated")
    version, text_len = struct.unpack_from("<II", data, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = len(MAGIC) + 8
    header = json.loads(data[start : start + text_len].decode("utf-8"))
    body = np.frombuffer(data[start + text_len : -4], dtype="<f8")
    offset = 0
    networks = {}
    for entry in header["networks"]:
        spec = ArchitectureSpec.from_dict(entry["spec"])
        size = entry["size"]
        networks[entry["name"]] = NetworkParams.from_flat(spec, body[offset : offset + size])
        offset += size
    arrays = {}
    for entry in header["arrays"]:
        size = math.prod(entry["shape"])
        arrays[entry["name"]] = body[offset : offset + size].reshape(entry["shape"]).astype(np.float64)
        offset += size
    if offset != body.size:
        raise CheckpointError(f"parameter block has {body.size} values, header accounts for {offset}")
    return Checkpoint(networks=networks, arrays=arrays, meta=header.get("meta", {}))


def save_checkpoint(path, ckpt: Checkpoint):
    atomic_write_bytes(path, encode_checkpoint(ckpt))


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes())


def load_generator(path) -> NetworkParams:
    ckpt = load_checkpoint(path)
    if "generator" not in ckpt.networks:
        raise CheckpointError(f"{path} holds no generator network")
    return ckpt.networks["generator"]
