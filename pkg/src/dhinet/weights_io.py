"""Binary weight persistence.

Layout, all little-endian:

    magic   4 bytes  b"DHI1"
    version u32      currently 1
    count   u32      number of tensors
    per tensor:
        name_len u32, name (UTF-8), rank u32, one u64 extent per axis,
        raw float64 values in C order
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"DHI1"
VERSION = 1


def save_tensors(path, tensors: dict[str, np.ndarray]):
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(tensors)))
        for name, value in tensors.items():
            value = np.asarray(value, dtype=np.float64)  # keeps rank 0 intact
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", value.ndim))
            fh.write(struct.pack(f"<{value.ndim}Q", *value.shape) if value.ndim else b"")
            fh.write(value.astype("<f8").tobytes())  # tobytes emits C order


def load_tensors(path) -> dict[str, np.ndarray]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path} is not a weight file (bad magic {raw[:4]!r})")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise ValueError(f"unsupported weight file version {version}")
    offset = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        name = raw[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        shape = struct.unpack_from(f"<{rank}Q", raw, offset) if rank else ()
        offset += 8 * rank
        n = int(np.prod(shape)) if rank else 1
        values = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).astype(np.float64)
        offset += 8 * n
        out[name] = values.reshape(shape)
    return out
