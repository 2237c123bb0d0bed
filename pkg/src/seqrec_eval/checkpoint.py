"""Binary parameter bundles.

Layout (all integers little-endian)::

    magic        8 bytes   b"SQRCKPT\\0"
    version      uint32
    header_len   uint32
    header       UTF-8 JSON: [{"name": str, "shape": [int, ...]}, ...]
    payload      float64 little-endian, row-major, tensors in header order
    digest       32 bytes  SHA-256 over everything above
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"SQRCKPT\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode(params: Mapping[str, np.ndarray]) -> bytes:
    table = [{"name": k, "shape": list(np.shape(v))} for k, v in params.items()]
    header = json.dumps(table, separators=(",", ":")).encode("utf-8")
    body = bytearray()
    body += MAGIC
    body += struct.pack("<II", VERSION, len(header))
    body += header
    for v in params.values():
        body += np.ascontiguousarray(v, dtype="<f8").tobytes()
    return bytes(body) + hashlib.sha256(body).digest()


def decode(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < len(MAGIC) + 8 + 32 or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a parameter bundle")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checksum mismatch")
    version, hlen = struct.unpack_from("<II", body, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"unsupported bundle version {version}")
    pos = len(MAGIC) + 8
    table = json.loads(body[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    out: dict[str, np.ndarray] = {}
    for entry in table:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(body, dtype="<f8", count=n, offset=pos).astype(np.float64)
        out[entry["name"]] = arr.reshape(shape)
        pos += 8 * n
    if pos != len(body):
        raise CheckpointError("trailing bytes after payload")
    return out


def save(path: str | Path, params: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode(params))


def load(path: str | Path) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())
