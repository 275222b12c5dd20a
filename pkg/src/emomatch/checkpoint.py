"""Binary model checkpoints.

Layout (all integers little-endian 64-bit):
  u64 format version | u64 config length | config JSON bytes |
  repeated parameter records until EOF:
    u64 name length | name bytes (utf-8) | u64 rank | u64 dims... | f64 values...
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: dict[str, np.ndarray], config: dict) -> None:
    path = Path(path)
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name, value in params.items():
            arr = np.ascontiguousarray(value, dtype="<f8")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<Q", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<Q", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    raw = path.read_bytes()
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(raw):
            raise CheckpointError(f"truncated checkpoint '{path}' at byte {off}")
        chunk = raw[off : off + n]
        off += n
        return chunk

    (version,) = struct.unpack("<Q", take(8))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (clen,) = struct.unpack("<Q", take(8))
    config = json.loads(take(clen).decode("utf-8"))
    params: dict[str, np.ndarray] = {}
    while off < len(raw):
        (nlen,) = struct.unpack("<Q", take(8))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<Q", take(8))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank)) if rank else ()
        count = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(take(8 * count), dtype="<f8").reshape(shape)
        params[name] = values.astype(np.float64)
    return config, params
