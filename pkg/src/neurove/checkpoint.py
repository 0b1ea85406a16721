"""Versioned checkpoint container.

Layout (all integers little-endian)::

    b"NVCK" | u32 format version | u32 header length | header JSON (utf-8)
    | tensor bytes (float32 LE, concatenated) | sha256 of everything before

The header echoes the model config together with ``config_version`` and
indexes every tensor by name, shape and byte offset. Extra JSON-serialisable
state (epoch counters, loss-scale EMAs, ...) travels in ``meta``.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"NVCK"
FORMAT_VERSION = 1
CONFIG_VERSION = 1


class CheckpointError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    kind: str
    config: dict
    tensors: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)
    config_version: int = CONFIG_VERSION


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    index, chunks, offset = [], [], 0
    for name, arr in ckpt.tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        index.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    header = json.dumps(
        {
            "kind": ckpt.kind,
            "config_version": ckpt.config_version,
            "config": ckpt.config,
            "meta": ckpt.meta,
            "tensors": index,
        },
        sort_keys=True,
    ).encode()
    body = MAGIC + struct.pack("<II", FORMAT_VERSION, len(header)) + header + b"".join(chunks)
    return body + hashlib.sha256(body).digest()


def decode_checkpoint(raw: bytes, expect_config_version: int | None = CONFIG_VERSION) -> Checkpoint:
    if len(raw) < 12 + 32 or raw[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checksum mismatch (file corrupted or truncated)")
    fmt, hlen = struct.unpack("<II", body[4:12])
    if fmt != FORMAT_VERSION:
        raise CheckpointError(f"unsupported container version {fmt}")
    header = json.loads(body[12 : 12 + hlen])
    if expect_config_version is not None and header["config_version"] != expect_config_version:
        raise CheckpointError(
            f"config version {header['config_version']} does not match expected {expect_config_version}"
        )
    data = body[12 + hlen :]
    tensors = {}
    for entry in header["tensors"]:
        buf = data[entry["offset"] : entry["offset"] + entry["nbytes"]]
        tensors[entry["name"]] = np.frombuffer(buf, dtype="<f4").astype(np.float64).reshape(entry["shape"])
    return Checkpoint(header["kind"], header["config"], tensors, header.get("meta", {}), header["config_version"])


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write atomically (temp file + rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(ckpt))
    os.replace(tmp, path)


def load_checkpoint(path, expect_config_version: int | None = CONFIG_VERSION) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes(), expect_config_version)
