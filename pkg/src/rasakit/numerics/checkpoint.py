"""Binary parameter checkpoints.

Layout (all integers little-endian)::

    b"RASACKPT" | u32 version | u32 record count
    per record: u16 id length | id (utf-8) | u8 ndim | u64 dims... | f64 values (row-major)
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from ..errors import ArtifactMismatch
from .tensor import Parameter

MAGIC = b"RASACKPT"
VERSION = 1


def save_parameters(path: str | Path, params: Iterable[Parameter]) -> None:
    chunks = [MAGIC]
    params = list(params)
    chunks.append(struct.pack("<II", VERSION, len(params)))
    for p in params:
        name = p.name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name)))
        chunks.append(name)
        chunks.append(struct.pack("<B", p.data.ndim))
        chunks.append(struct.pack(f"<{p.data.ndim}Q", *p.data.shape))
        chunks.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_parameters(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ArtifactMismatch(f"{path}: not a parameter checkpoint")
    version, count = struct.unpack_from("<II", raw, 8)
    if version != VERSION:
        raise ArtifactMismatch(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<B", raw, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}Q", raw, pos)
        pos += 8 * ndim
        size = int(np.prod(shape, dtype=np.int64))
        out[name] = np.frombuffer(raw, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    if pos != len(raw):
        raise ArtifactMismatch(f"{path}: trailing bytes after {count} records")
    return out


def assign_parameters(params: Mapping[str, Parameter], values: Mapping[str, np.ndarray]) -> None:
    """Copy loaded arrays into ``params``; names and shapes must match exactly."""
    if set(params) != set(values):
        missing = sorted(set(params) ^ set(values))
        raise ArtifactMismatch(f"checkpoint parameter names differ: {missing[:5]}")
    for name, p in params.items():
        if values[name].shape != p.shape:
            raise ArtifactMismatch(f"{name}: checkpoint shape {values[name].shape} != {p.shape}")
        p.data = values[name].copy()
        p.zero_grad()
