"""Parameter checkpoint file: magic "EMBW", little-endian binary.

Layout: magic, u32 format version, u32 tensor count, then per tensor a u16
name length, the UTF-8 name, a u8 rank, the dims as u32s and the raw
float32 payload (row-major).
"""

from __future__ import annotations

import struct

import numpy as np

WEIGHT_MAGIC = b"EMBW"
WEIGHT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, named_arrays):
    """Write an ordered mapping of name -> float32 array."""
    items = list(named_arrays.items() if hasattr(named_arrays, "items") else named_arrays)
    with open(path, "wb") as fh:
        fh.write(WEIGHT_MAGIC)
        fh.write(struct.pack("<II", WEIGHT_VERSION, len(items)))
        for name, arr in items:
            arr = np.ascontiguousarray(arr, dtype="<f4")
            raw = name.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise CheckpointError(f"tensor name too long: {name!r}")
            if arr.ndim > 0xFF:
                raise CheckpointError(f"tensor rank too large: {arr.ndim}")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path):
    """Read a checkpoint back as an ordered dict of float32 arrays."""
    out = {}
    with open(path, "rb") as fh:
        if fh.read(4) != WEIGHT_MAGIC:
            raise CheckpointError(f"{path}: bad magic")
        version, count = struct.unpack("<II", fh.read(8))
        if version != WEIGHT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
            size = int(np.prod(shape)) if shape else 1
            buf = fh.read(4 * size)
            if len(buf) != 4 * size:
                raise CheckpointError(f"{path}: truncated payload for {name!r}")
            out[name] = np.frombuffer(buf, dtype="<f4").reshape(shape).copy()
    return out
