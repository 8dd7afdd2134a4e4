"""Deterministic binary container for named arrays plus JSON metadata.

Checkpoints must be byte-identical across reruns with the same seed, which
rules out zip-based containers (they embed timestamps). The format is a
versioned magic line, a JSON metadata block, then arrays sorted by name with
explicit dtype and shape. All integers are little-endian uint64.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"UNITYPE-ARRAYS-1\n"


def _pack_str(text: str) -> bytes:
    payload = text.encode("utf-8")
    return struct.pack("<Q", len(payload)) + payload


def write_arrays(path: str | Path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC]
    chunks.append(_pack_str(json.dumps(meta, sort_keys=True, ensure_ascii=False)))
    chunks.append(struct.pack("<Q", len(arrays)))
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        # Pin byte order so files are portable and stable.
        dtype = arr.dtype.newbyteorder("<")
        arr = arr.astype(dtype, copy=False)
        chunks.append(_pack_str(name))
        chunks.append(_pack_str(dtype.str))
        chunks.append(struct.pack("<Q", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b"")
        chunks.append(arr.tobytes(order="C"))
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ValueError(f"{self.path}: truncated array file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def text(self) -> str:
        return self.take(self.u64()).decode("utf-8")


def read_arrays(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    reader = _Reader(path.read_bytes(), str(path))
    if reader.take(len(MAGIC)) != MAGIC:
        raise ValueError(f"{path}: not a unitype array file")
    meta = json.loads(reader.text())
    arrays: dict[str, np.ndarray] = {}
    for _ in range(reader.u64()):
        name = reader.text()
        dtype = np.dtype(reader.text())
        ndim = reader.u64()
        shape = struct.unpack(f"<{ndim}Q", reader.take(8 * ndim)) if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        payload = reader.take(count * dtype.itemsize)
        arrays[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    return meta, arrays
