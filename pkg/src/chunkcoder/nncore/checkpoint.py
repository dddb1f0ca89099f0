"""NNC1 binary checkpoint format.

Layout (all integers little-endian):

    magic   4 bytes  b"NNC1"
    count   u64      number of parameters
    per parameter:
        name_len  u16    UTF-8 byte length of the name
        name      bytes
        rank      u8
        extents   u32 * rank
        values    f64 * prod(extents), IEEE-754 binary64 little-endian

Round-trips are bit-exact: values are written straight from the float64
buffers.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"NNC1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, state):
    """Write {name: float64 array} to ``path`` in NNC1 format."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(state)))
        for name, arr in state.items():
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", arr.ndim))
            for extent in arr.shape:
                f.write(struct.pack("<I", extent))
            f.write(arr.astype("<f8", copy=False).tobytes())


def load_checkpoint(path):
    """Read an NNC1 file back into {name: float64 array}."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"bad magic in {path}: {blob[:4]!r}")
    off = 4
    (count,) = struct.unpack_from("<Q", blob, off)
    off += 8
    state = {}
    for _ in range(count):
        try:
            (name_len,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off:off + name_len].decode("utf-8")
            off += name_len
            (rank,) = struct.unpack_from("<B", blob, off)
            off += 1
            shape = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
            n_values = int(np.prod(shape, dtype=np.int64)) if rank else 1
            end = off + 8 * n_values
            if end > len(blob):
                raise CheckpointError(f"truncated checkpoint {path} at parameter {name!r}")
            values = np.frombuffer(blob[off:end], dtype="<f8").reshape(shape)
            off = end
        except struct.error as exc:
            raise CheckpointError(f"truncated checkpoint {path}") from exc
        if name in state:
            raise CheckpointError(f"duplicate parameter {name!r} in {path}")
        state[name] = values.astype(np.float64)
    return state
