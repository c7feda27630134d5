"""Binary tensor container with a trailing payload checksum.

Byte layout, all multi-byte fields little-endian:

    magic    4 bytes  b"XMRT"
    version  u16      format version, currently 1
    rank     u8       number of dimensions
    dims     rank x u32
    payload  product(dims) x f64, row-major
    crc      u32      CRC32 (zlib) of the payload bytes

64-bit floats keep gradient-check tolerances honest downstream.  Loading
verifies magic, version, rank, byte length, and checksum, each failure
carrying its own stable error code.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .errors import DataError, TensorFileError

MAGIC = b"XMRT"
VERSION = 1
MAX_RANK = 8


def save_tensor(path, array):
    """Write a float array (any rank up to 8) to the container format."""
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim < 1 or arr.ndim > MAX_RANK:
        raise DataError(f"rank {arr.ndim} outside [1, {MAX_RANK}]")
    if not np.all(np.isfinite(arr)):
        raise DataError("tensor values must be finite")
    payload = np.ascontiguousarray(arr).astype("<f8").tobytes()
    header = MAGIC + struct.pack("<HB", VERSION, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload)))


def load_tensor(path):
    """Read a container file back into a float64 array.

    Raises TensorFileError with code "bad-magic", "bad-version",
    "bad-rank", "bad-length", or "bad-crc" on the respective violation.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 7 or blob[:4] != MAGIC:
        raise TensorFileError("bad-magic", f"{path}: not a tensor file")
    version, rank = struct.unpack_from("<HB", blob, 4)
    if version != VERSION:
        raise TensorFileError(
            "bad-version", f"{path}: version {version}, expected {VERSION}")
    if rank < 1 or rank > MAX_RANK:
        raise TensorFileError(
            "bad-rank", f"{path}: rank {rank} outside [1, {MAX_RANK}]")
    offset = 7 + 4 * rank
    if len(blob) < offset:
        raise TensorFileError(
            "bad-length", f"{path}: truncated before dims")
    dims = struct.unpack_from(f"<{rank}I", blob, 7)
    n_values = 1
    for d in dims:
        n_values *= d
    expected = offset + 8 * n_values + 4
    if len(blob) != expected:
        raise TensorFileError(
            "bad-length",
            f"{path}: {len(blob)} bytes, expected {expected} for dims {dims}")
    payload = blob[offset:offset + 8 * n_values]
    (crc,) = struct.unpack_from("<I", blob, offset + 8 * n_values)
    if zlib.crc32(payload) != crc:
        raise TensorFileError("bad-crc", f"{path}: checksum mismatch")
    return np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
