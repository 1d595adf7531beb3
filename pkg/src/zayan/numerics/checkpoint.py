"""Binary named-tensor checkpoints.

Layout (all integers little-endian)::

    magic    4 bytes   b"ZYNT"
    version  uint8     currently 1
    count    uint32    number of tensors
    repeated count times:
        name_len uint16, name (utf-8, name_len bytes)
        ndim     uint8,  dims (uint32 x ndim)
        values   float64 x prod(dims), row-major

The feature-embedding matrix file uses its own header::

    magic b"ZYNZ", version uint8, d uint32, m uint32,
    then d*m float64 values in column-major order (column j is z_j).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

TENSOR_MAGIC = b"ZYNT"
MATRIX_MAGIC = b"ZYNZ"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    chunks = [TENSOR_MAGIC, struct.pack("<BI", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_tensors(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    try:
        return _parse_tensors(buf, path)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({exc})") from None


def _parse_tensors(buf: bytes, path) -> dict[str, np.ndarray]:
    if buf[:4] != TENSOR_MAGIC:
        raise CheckpointError(f"{path}: not a tensor checkpoint")
    version, count = struct.unpack_from("<BI", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 9
    out = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + n].decode("utf-8")
        pos += n
        (ndim,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return out


def save_matrix(path, Z: np.ndarray) -> None:
    Z = np.asarray(Z, dtype="<f8")
    d, m = Z.shape
    Path(path).write_bytes(MATRIX_MAGIC + struct.pack("<BII", VERSION, d, m) + Z.tobytes(order="F"))


def load_matrix(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:4] != MATRIX_MAGIC:
        raise CheckpointError(f"{path}: not an embedding-matrix file")
    try:
        version, d, m = struct.unpack_from("<BII", buf, 4)
    except struct.error:
        raise CheckpointError(f"{path}: truncated header") from None
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported matrix version {version}")
    if (len(buf) - 13) % 8:
        raise CheckpointError(f"{path}: truncated values")
    vals = np.frombuffer(buf, dtype="<f8", offset=13)
    if vals.size != d * m:
        raise CheckpointError(f"{path}: expected {d * m} values, found {vals.size}")
    return vals.reshape((d, m), order="F").astype(np.float64)
