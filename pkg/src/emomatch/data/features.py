"""Binary feature files.

One file per modality. Each record is: rank (i64 LE), dims (i64 LE each),
then the values as little-endian float32. Offsets index records from the
start of the file; values are widened to float64 on read.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np


class FeatureIOError(IOError):
    pass


def append_record(fh, arr: np.ndarray) -> int:
    """Write one record at the current end of ``fh``; returns its offset."""
    arr = np.ascontiguousarray(arr, dtype="<f4")
    offset = fh.tell()
    fh.write(struct.pack("<q", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
    fh.write(arr.tobytes())
    return offset


def read_record(fh, offset: int) -> np.ndarray:
    """Read the record at ``offset``; raises on truncation."""
    fh.seek(offset)
    head = fh.read(8)
    if len(head) != 8:
        raise FeatureIOError(f"truncated record header at offset {offset}")
    (rank,) = struct.unpack("<q", head)
    if rank < 1 or rank > 4:
        raise FeatureIOError(f"implausible record rank {rank} at offset {offset}")
    dims_raw = fh.read(8 * rank)
    if len(dims_raw) != 8 * rank:
        raise FeatureIOError(f"truncated record dims at offset {offset}")
    shape = struct.unpack(f"<{rank}q", dims_raw)
    count = int(np.prod(shape))
    payload = fh.read(4 * count)
    if len(payload) != 4 * count:
        raise FeatureIOError(f"truncated record payload at offset {offset}")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float64)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def open_for_append(path) -> "FileHandle":
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return open(path, "ab")
