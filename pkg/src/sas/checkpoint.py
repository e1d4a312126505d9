"""Checkpoint file format.

Layout (all integers little-endian)::

    b"SASCKPT\\n"                 magic
    uint32                        header length in bytes
    header                        UTF-8 JSON, keys sorted; lists every array as
                                  [name, shape, dtype] in storage order
    array payloads                raw little-endian bytes, in header order
    32 bytes                      SHA-256 of everything above

The trailing digest makes truncation and corruption detectable before any
state is handed back.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"SASCKPT\n"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_checkpoint(arrays: dict[str, np.ndarray], meta: dict[str, Any]) -> bytes:
    specs = []
    payload = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr)
        dt = a.dtype.newbyteorder("<")
        specs.append([name, list(a.shape), dt.str])
        payload.append(a.astype(dt, copy=False).tobytes())
    header = dict(meta, version=VERSION, arrays=specs)
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = MAGIC + struct.pack("<I", len(hbytes)) + hbytes + b"".join(payload)
    return body + hashlib.sha256(body).digest()


def decode_checkpoint(raw: bytes) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    if len(raw) < len(MAGIC) + 4 + 32 or not raw.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic or truncated)")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint digest mismatch (truncated or corrupted)")
    (hlen,) = struct.unpack_from("<I", body, len(MAGIC))
    off = len(MAGIC) + 4
    header = json.loads(body[off : off + hlen].decode("utf-8"))
    if header.get("version") != VERSION:
        raise CheckpointError(f"checkpoint version {header.get('version')} != supported {VERSION}")
    off += hlen
    arrays = {}
    for name, shape, dtype in header["arrays"]:
        dt = np.dtype(dtype)
        n = int(np.prod(shape)) * dt.itemsize
        if off + n > len(body):
            raise CheckpointError("checkpoint payload truncated")
        arrays[name] = np.frombuffer(body, dtype=dt, count=int(np.prod(shape)), offset=off).reshape(shape).astype(dt.newbyteorder("="))
        off += n
    if off != len(body):
        raise CheckpointError("trailing bytes in checkpoint payload")
    meta = {k: v for k, v in header.items() if k not in ("arrays", "version")}
    return arrays, meta


def save(path: str | Path, arrays: dict[str, np.ndarray], meta: dict[str, Any]) -> str:
    """Write atomically; returns the file's SHA-256 hex digest."""
    data = encode_checkpoint(arrays, meta)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)
    return hashlib.sha256(data).hexdigest()


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    return decode_checkpoint(Path(path).read_bytes())


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
