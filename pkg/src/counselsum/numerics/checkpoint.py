"""Flat binary container for named float64 tensors.

Layout (all integers little-endian):
    magic "PIEC" | version u32 | tensor count u32
    per tensor: name length u32 | name utf-8 | rank u32 | extents u64 each
                | raw little-endian float64 data, C order
Tensors are written sorted by name, so identical contents give identical bytes.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"PIEC"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    path = Path(path)
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype=np.float64)
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b"")
        chunks.append(arr.astype("<f8").tobytes())
    blob = b"".join(chunks)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_tensors(path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    view = memoryview(blob)
    if view[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    version, count = struct.unpack_from("<II", view, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported container version {version}")
    offset = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", view, offset)
            offset += 4
            name = bytes(view[offset:offset + name_len]).decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", view, offset)
            offset += 4
            shape = struct.unpack_from(f"<{rank}Q", view, offset) if rank else ()
            offset += 8 * rank
            size = int(np.prod(shape)) if rank else 1
            arr = np.frombuffer(view, dtype="<f8", count=size, offset=offset)
            offset += 8 * size
            out[name] = arr.astype(np.float64).reshape(shape)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint") from exc
    return out
