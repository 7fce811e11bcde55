"""Binary tensor container.

Layout (all integers little-endian)::

    b"ILORA-CKPT"  u32 version  u64 count
    repeat count times:
        u64 name_len  name (UTF-8)  u64 rows  u64 cols  rows*cols f64
"""
from __future__ import annotations

import io
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"ILORA-CKPT"
VERSION = 1


class CheckpointError(IOError):
    pass


def _as_2d(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype="<f8")
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        return arr.reshape(1, -1)
    if arr.ndim == 2:
        return arr
    raise CheckpointError(f"only tensors up to 2-D are stored, got shape {arr.shape}")


def dumps(tensors: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IQ", VERSION, len(tensors)))
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        mat = _as_2d(arr)
        buf.write(struct.pack("<Q", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<QQ", *mat.shape))
        buf.write(np.ascontiguousarray(mat).tobytes())
    return buf.getvalue()


def loads(data: bytes) -> dict[str, np.ndarray]:
    view = memoryview(data)
    if bytes(view[: len(MAGIC)]) != MAGIC:
        raise CheckpointError("not an ILORA-CKPT container")
    pos = len(MAGIC)
    version, count = struct.unpack_from("<IQ", view, pos)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos += 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<Q", view, pos)
            pos += 8
            name = bytes(view[pos: pos + n]).decode("utf-8")
            pos += n
            rows, cols = struct.unpack_from("<QQ", view, pos)
            pos += 16
            size = rows * cols * 8
            if pos + size > len(view):
                raise CheckpointError(f"truncated tensor {name!r}")
            out[name] = np.frombuffer(view[pos: pos + size], dtype="<f8").reshape(rows, cols).astype(np.float64)
            pos += size
    except struct.error as exc:
        raise CheckpointError("truncated checkpoint") from exc
    if pos != len(view):
        raise CheckpointError("trailing bytes after last tensor")
    return out


def save(path: str | os.PathLike, tensors: dict[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps(tensors))
    os.replace(tmp, path)
    return path


def load(path: str | os.PathLike) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
