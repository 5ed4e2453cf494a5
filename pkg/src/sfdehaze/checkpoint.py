"""Binary checkpoint format.

Layout (all integers little-endian)::

    8 bytes   magic  b"SFDHCKPT"
    u32       format version (1)
    u32       metadata length M
    M bytes   metadata, UTF-8 JSON with sorted keys; always contains "arch"
    u32       tensor count T
    T times:
        u16       name length L
        L bytes   name, UTF-8
        u8        ndim D
        D x u32   dims
        prod(dims) x float32 (little-endian) data, row-major
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"SFDHCKPT"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    arch: str
    metadata: dict = field(default_factory=dict)
    tensors: dict = field(default_factory=dict)

    def load_into(self, module) -> None:
        """Copy tensors into ``module``'s parameters, checking names and dims."""
        own = dict(module.named_parameters())
        missing = [n for n in own if n not in self.tensors]
        if missing:
            raise CheckpointError(f"checkpoint is missing tensors: {', '.join(missing)}")
        for name, p in own.items():
            arr = self.tensors[name]
            if arr.shape != p.shape:
                raise CheckpointError(f"tensor {name}: dims {arr.shape} do not match expected {p.shape}")
            p.data = np.array(arr, dtype=np.float32)

    def checksum(self, prefix: str = "") -> str:
        return tensors_checksum({k: v for k, v in self.tensors.items() if k.startswith(prefix)})


def tensors_checksum(tensors: dict) -> str:
    h = hashlib.sha256()
    for name in sorted(tensors):
        h.update(name.encode())
        h.update(np.ascontiguousarray(tensors[name], dtype="<f4").tobytes())
    return h.hexdigest()


def to_bytes(ckpt: Checkpoint) -> bytes:
    meta = dict(ckpt.metadata)
    meta["arch"] = ckpt.arch
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta_bytes)), meta_bytes,
             struct.pack("<I", len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr)
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"refusing to save non-finite values in parameter {name}")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def from_bytes(buf: bytes) -> Checkpoint:
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"checkpoint truncated while reading {what}")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    if take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError("bad magic: not a checkpoint file")
    version, meta_len = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        meta = json.loads(take(meta_len, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint metadata: {exc}") from exc
    arch = meta.pop("arch", None)
    if not isinstance(arch, str):
        raise CheckpointError("checkpoint metadata lacks an architecture id")
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    tensors = {}
    for i in range(count):
        (nlen,) = struct.unpack("<H", take(2, f"name length of tensor #{i}"))
        name = take(nlen, f"name of tensor #{i}").decode("utf-8", errors="replace")
        (ndim,) = struct.unpack("<B", take(1, f"ndim of tensor {name}"))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim, f"dims of tensor {name}"))
        n = int(np.prod(dims)) if ndim else 1
        data = np.frombuffer(take(4 * n, f"data of tensor {name}"), dtype="<f4")
        tensors[name] = data.reshape(dims).astype(np.float32)
    if pos != len(buf):
        raise CheckpointError(f"{len(buf) - pos} trailing bytes after last tensor")
    return Checkpoint(arch, meta, tensors)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    data = to_bytes(ckpt)
    with open(os.fspath(path), "wb") as fh:
        fh.write(data)


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(os.fspath(path), "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    return from_bytes(buf)
