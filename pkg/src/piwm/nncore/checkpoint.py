"""Binary parameter checkpoints.

Layout (all little-endian)::

    b"PIWMCKPT"  u16 version  u32 tensor count  u32 meta length  meta (UTF-8 JSON)
    per tensor:  u16 name length  name  u8 trainable  u8 ndim  u32 * ndim shape  f8 * size data
    sha256 of everything above (32 bytes)
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .layers import Param

MAGIC = b"PIWMCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_checkpoint(tensors: dict, meta: dict | None = None) -> bytes:
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<HII", VERSION, len(tensors), len(meta_bytes)), meta_bytes]
    for name, t in tensors.items():
        value, trainable = (t.value, t.trainable) if isinstance(t, Param) else (np.asarray(t), True)
        value = np.ascontiguousarray(value, dtype="<f8")
        raw = name.encode()
        parts.append(struct.pack("<HBB", len(raw), int(trainable), value.ndim) + raw)
        parts.append(struct.pack(f"<{value.ndim}I", *value.shape))
        parts.append(value.tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def decode_checkpoint(blob: bytes) -> tuple[dict[str, tuple[np.ndarray, bool]], dict]:
    if len(blob) < 50 or blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic or too short)")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch")
    version, count, meta_len = struct.unpack_from("<HII", body, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 18
    meta = json.loads(body[pos:pos + meta_len])
    pos += meta_len
    out: dict[str, tuple[np.ndarray, bool]] = {}
    for _ in range(count):
        name_len, trainable, ndim = struct.unpack_from("<HBB", body, pos)
        pos += 4
        name = body[pos:pos + name_len].decode()
        pos += name_len
        shape = struct.unpack_from(f"<{ndim}I", body, pos)
        pos += 4 * ndim
        size = int(np.prod(shape, dtype=np.int64))
        value = np.frombuffer(body, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
        out[name] = (value, bool(trainable))
    if pos != len(body):
        raise CheckpointError("trailing bytes in checkpoint")
    return out, meta


def save_checkpoint(path, tensors: dict, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_checkpoint(tensors, meta))
    tmp.replace(path)
    return path


def load_checkpoint(path) -> tuple[dict[str, tuple[np.ndarray, bool]], dict]:
    return decode_checkpoint(Path(path).read_bytes())


def restore_params(params: dict[str, Param], stored: dict[str, tuple[np.ndarray, bool]], strict: bool = True):
    """Copy stored values into live parameters, re-freezing the frozen ones."""
    missing = set(params) - set(stored)
    if strict and (missing or set(stored) - set(params)):
        raise CheckpointError(f"parameter names differ; missing {sorted(missing)[:5]}")
    for name, p in params.items():
        if name not in stored:
            continue
        value, trainable = stored[name]
        if value.shape != p.value.shape:
            raise CheckpointError(f"{name}: stored shape {value.shape} != live {p.value.shape}")
        p.value.flags.writeable = True
        p.value[...] = value
        p.trainable = True
        if not trainable:
            p.freeze()
