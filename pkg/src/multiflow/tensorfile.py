"""The MFTN binary tensor format.

Layout (little-endian)::

    0   4s  magic  b"MFTN"
    4   u16 version (1)
    6   u8  dtype tag (0 = float32, 1 = uint8)
    7   u8  ndim
    8   u32 * ndim extents
    ..  payload, row-major
"""

import struct

import numpy as np

from .exceptions import FormatError

__all__ = ["MAGIC", "VERSION", "encode_tensor", "decode_tensor", "write_tensor", "read_tensor"]

MAGIC = b"MFTN"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_TAGS = {np.dtype("float32"): 0, np.dtype("uint8"): 1}


def encode_tensor(array):
    array = np.asarray(array)
    if array.dtype == np.bool_:
        array = array.astype(np.uint8)
    tag = _TAGS.get(array.dtype)
    if tag is None:
        raise FormatError(f"unsupported dtype {array.dtype}; use float32 or uint8")
    if array.ndim == 0 or array.ndim > 255:
        raise FormatError(f"unsupported rank {array.ndim}")
    if 0 in array.shape:
        raise FormatError(f"empty extent in shape {array.shape}")
    header = MAGIC + struct.pack("<HBB", VERSION, tag, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    return header + np.ascontiguousarray(array, dtype=_DTYPES[tag]).tobytes()


def decode_tensor(buf):
    buf = bytes(buf)
    if len(buf) < 8:
        raise FormatError(f"file too short for header: {len(buf)} bytes", offset=len(buf))
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}", offset=0)
    version, tag, ndim = struct.unpack_from("<HBB", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if tag not in _DTYPES:
        raise FormatError(f"unknown dtype tag {tag}", offset=6)
    if ndim == 0:
        raise FormatError("rank 0 tensors are not allowed", offset=7)
    end = 8 + 4 * ndim
    if len(buf) < end:
        raise FormatError("truncated extents", offset=len(buf))
    shape = struct.unpack_from(f"<{ndim}I", buf, 8)
    for k, n in enumerate(shape):
        if n == 0:
            raise FormatError(f"empty extent on axis {k}", offset=8 + 4 * k)
    dtype = _DTYPES[tag]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(buf) < end + nbytes:
        raise FormatError(
            f"truncated payload: expected {nbytes} bytes, found {len(buf) - end}",
            offset=len(buf))
    if len(buf) > end + nbytes:
        raise FormatError(f"{len(buf) - end - nbytes} trailing bytes", offset=end + nbytes)
    data = np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize, offset=end)
    return data.reshape(shape).astype(dtype.newbyteorder("="), copy=True)


def write_tensor(path, array):
    with open(path, "wb") as fh:
        fh.write(encode_tensor(array))


def read_tensor(path):
    with open(path, "rb") as fh:
        return decode_tensor(fh.read())
