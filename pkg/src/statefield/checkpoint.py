"""Versioned little-endian checkpoint files.

Layout::

    b"LEIA" | u32 version | u64 iteration
    u32 n | n bytes of UTF-8 JSON (config echo, optimizer step, metadata)
    u32 count | count x tensor record

    tensor record: u16 name length | name | u8 dtype (0=f4, 1=f8) | u8 ndim |
                   ndim x u32 extents | raw little-endian values
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"LEIA"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {v: k for k, v in _DTYPES.items()}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    iteration: int
    config: dict
    tensors: dict[str, np.ndarray]
    optimizer_step: int = 0
    meta: dict = field(default_factory=dict)

    def params(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.tensors.items() if not k.startswith("adam.")}

    def moments(self) -> tuple[dict, dict]:
        m = {k[len("adam.m/"):]: v for k, v in self.tensors.items() if k.startswith("adam.m/")}
        v = {k[len("adam.v/"):]: v for k, v in self.tensors.items() if k.startswith("adam.v/")}
        return m, v


def to_bytes(ckpt: Checkpoint) -> bytes:
    blob = json.dumps(
        {"config": ckpt.config, "optimizer_step": ckpt.optimizer_step, "meta": ckpt.meta},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    out = [MAGIC, struct.pack("<IQ", VERSION, ckpt.iteration), struct.pack("<I", len(blob)), blob]
    out.append(struct.pack("<I", len(ckpt.tensors)))
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in _CODES:
            raise CheckpointError(f"tensor {name}: unsupported dtype {arr.dtype}")
        key = name.encode("utf-8")
        out.append(struct.pack("<H", len(key)) + key)
        out.append(struct.pack("<BB", _CODES[dt], arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    return b"".join(out)


def from_bytes(raw: bytes, source: str = "<bytes>") -> Checkpoint:
    view = memoryview(raw)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError(f"{source}: truncated checkpoint")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint (bad magic)")
    version, iteration = struct.unpack("<IQ", take(12))
    if version != VERSION:
        raise CheckpointError(f"{source}: checkpoint version {version}, expected {VERSION}")
    (n,) = struct.unpack("<I", take(4))
    head = json.loads(bytes(take(n)).decode("utf-8"))
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (ln,) = struct.unpack("<H", take(2))
        name = bytes(take(ln)).decode("utf-8")
        code, ndim = struct.unpack("<BB", take(2))
        if code not in _DTYPES:
            raise CheckpointError(f"{source}: tensor {name} has unknown dtype code {code}")
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        dt = _DTYPES[code]
        size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        tensors[name] = np.frombuffer(bytes(take(size)), dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
    if pos != len(view):
        raise CheckpointError(f"{source}: trailing bytes after tensor table")
    return Checkpoint(iteration, head["config"], tensors, head.get("optimizer_step", 0), head.get("meta", {}))


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"{path}: no such checkpoint") from None
    return from_bytes(raw, str(path))
