"""NDT1 binary tensor files.

Layout, all integers little-endian::

    b"NDT1" | dtype code (u8) | ndim (u8) | ndim x u64 dims | row-major payload

Dtype codes: 1 = float64, 2 = float32, 3 = int64.
"""

import os
import struct
import tempfile
from contextlib import contextmanager

import numpy as np

from cogfactor.errors import BadMagic, TruncatedFile, UnsupportedDtype

MAGIC = b"NDT1"

_CODES = {1: np.dtype("<f8"), 2: np.dtype("<f4"), 3: np.dtype("<i8")}
_BY_KIND = {("f", 8): 1, ("f", 4): 2, ("i", 8): 3}


@contextmanager
def atomic_open(path, mode="wb"):
    """Write to a temporary sibling of ``path`` and rename it into place."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode(array):
    array = np.asarray(array)
    code = _BY_KIND.get((array.dtype.kind, array.dtype.itemsize))
    if code is None:
        raise UnsupportedDtype(f"NDT stores float64, float32 or int64, not {array.dtype}")
    if array.ndim > 255:
        raise UnsupportedDtype("NDT supports at most 255 dimensions")
    header = MAGIC + struct.pack("<BB", code, array.ndim) + struct.pack(f"<{array.ndim}Q", *array.shape)
    payload = np.ascontiguousarray(array, dtype=_CODES[code]).tobytes(order="C")
    return header + payload


def decode(buf):
    buf = memoryview(buf)
    if len(buf) < 6:
        if bytes(buf[:len(MAGIC)]) != MAGIC[:len(buf)]:
            raise BadMagic("not an NDT1 file")
        raise TruncatedFile("NDT header is incomplete")
    if bytes(buf[:4]) != MAGIC:
        raise BadMagic(f"bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}")
    code, ndim = struct.unpack_from("<BB", buf, 4)
    if code not in _CODES:
        raise UnsupportedDtype(f"unknown NDT dtype code {code}")
    offset = 6 + 8 * ndim
    if len(buf) < offset:
        raise TruncatedFile("NDT shape header is incomplete")
    shape = struct.unpack_from(f"<{ndim}Q", buf, 6)
    dtype = _CODES[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(buf) < offset + nbytes:
        raise TruncatedFile(f"payload has {len(buf) - offset} bytes, expected {nbytes}")
    if len(buf) > offset + nbytes:
        raise TruncatedFile(f"{len(buf) - offset - nbytes} trailing bytes after payload")
    out = np.frombuffer(buf[offset:offset + nbytes], dtype=dtype).reshape(shape)
    return out.astype(dtype.newbyteorder("="), copy=True)


def write_tensor(path, array):
    with atomic_open(path) as fh:
        fh.write(encode(array))


def read_tensor(path):
    with open(path, "rb") as fh:
        return decode(fh.read())
