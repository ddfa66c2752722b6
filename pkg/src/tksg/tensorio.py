"""Binary tensor files.

Layout: ``b"TKSG"``, u8 version (=1), u32 ndim, ndim x u32 dims, then the
row-major little-endian float32 payload.
"""

from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"TKSG"
VERSION = 1


class TensorFileError(ValueError):
    pass


def save_tensor(path, array) -> None:
    arr = np.ascontiguousarray(np.asarray(array, dtype="<f4"))
    header = MAGIC + struct.pack("<BI", VERSION, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes(order="C"))


def read_header(path) -> tuple[int, tuple[int, ...]]:
    with open(path, "rb") as fh:
        head = fh.read(9)
        if len(head) < 9 or head[:4] != MAGIC:
            raise TensorFileError(f"{path}: bad magic bytes")
        version, ndim = struct.unpack("<BI", head[4:9])
        if version != VERSION:
            raise TensorFileError(f"{path}: unsupported version {version}")
        dims = fh.read(4 * ndim)
        if len(dims) != 4 * ndim:
            raise TensorFileError(f"{path}: truncated header")
        return version, struct.unpack(f"<{ndim}I", dims)


def load_tensor(path) -> np.ndarray:
    _, shape = read_header(path)
    offset = 9 + 4 * len(shape)
    with open(path, "rb") as fh:
        fh.seek(offset)
        payload = fh.read()
    count = int(np.prod(shape)) if shape else 1
    if len(payload) != 4 * count:
        raise TensorFileError(f"{path}: payload has {len(payload)} bytes, expected {4 * count}")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
