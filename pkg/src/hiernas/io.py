"""HT1 binary tensor files.

Layout: magic ``b"HT1\\0"``, little-endian u32 rank, ``rank`` little-endian
u32 dims, then ``prod(dims)`` little-endian float32 values in row-major order.
"""

from __future__ import annotations

import os
import struct
from typing import Sequence

import numpy as np

MAGIC = b"HT1\x00"


class HT1Error(ValueError):
    pass


def _header(shape: Sequence[int]) -> bytes:
    return MAGIC + struct.pack(f"<I{len(shape)}I", len(shape), *shape)


def write_ht1(path, array) -> None:
    a = np.ascontiguousarray(array, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_header(a.shape))
        fh.write(a.tobytes(order="C"))


def read_header(fh) -> tuple:
    magic = fh.read(4)
    if magic != MAGIC:
        raise HT1Error(f"bad magic {magic!r}, expected {MAGIC!r}")
    raw = fh.read(4)
    if len(raw) != 4:
        raise HT1Error("truncated header")
    (rank,) = struct.unpack("<I", raw)
    raw = fh.read(4 * rank)
    if len(raw) != 4 * rank:
        raise HT1Error("truncated dims")
    return tuple(struct.unpack(f"<{rank}I", raw))


def read_ht1(path, mmap: bool = False) -> np.ndarray:
    """Read an HT1 file as a float32 array (memory-mapped if ``mmap``)."""
    with open(path, "rb") as fh:
        shape = read_header(fh)
        offset = fh.tell()
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    expected = offset + 4 * count
    actual = os.path.getsize(path)
    if actual != expected:
        raise HT1Error(f"{path}: payload size mismatch, file has {actual} bytes, header implies {expected}")
    if mmap:
        return np.memmap(path, dtype="<f4", mode="r", offset=offset, shape=shape)
    with open(path, "rb") as fh:
        fh.seek(offset)
        data = np.frombuffer(fh.read(), dtype="<f4", count=count)
    return data.reshape(shape).astype(np.float32)


class HT1Writer:
    """Stream rows into an HT1 file whose full shape is known up front."""

    def __init__(self, path, shape: Sequence[int]):
        self.path = path
        self.shape = tuple(int(s) for s in shape)
        self._row = int(np.prod(self.shape[1:], dtype=np.int64))
        self._rows = 0
        self._fh = open(path, "wb")
        self._fh.write(_header(self.shape))

    def write(self, rows) -> None:
        a = np.ascontiguousarray(rows, dtype="<f4").reshape(-1, self._row)
        if self._rows + len(a) > self.shape[0]:
            raise HT1Error(f"{self.path}: more rows than the declared {self.shape[0]}")
        self._fh.write(a.tobytes())
        self._rows += len(a)

    def close(self, check: bool = True) -> None:
        if self._fh.closed:
            return
        self._fh.close()
        if check and self._rows != self.shape[0]:
            raise HT1Error(f"{self.path}: wrote {self._rows} rows, header declares {self.shape[0]}")

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close(check=exc_type is None)
