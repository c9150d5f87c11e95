"""Binary grid dumps: 16-byte header of dimensions, then the payload.

Layout: two little-endian int64 (rows, cols) followed by rows*cols
little-endian float64 values in row-major (C) order.  Used for distance
fields, K-set indicators and eigenvector magnitude dumps; complex vectors
are written as a pair of files (suffix ``_re``/``_im``).
"""

import struct

import numpy as np

_HEADER = struct.Struct("<qq")


def write_grid(path, array):
    a = np.ascontiguousarray(array, dtype="<f8")
    if a.ndim != 2:
        raise ValueError("grid dumps are 2D")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(*a.shape))
        fh.write(a.tobytes(order="C"))
    return path


def read_grid(path):
    with open(path, "rb") as fh:
        n1, n2 = _HEADER.unpack(fh.read(_HEADER.size))
        data = np.frombuffer(fh.read(8 * n1 * n2), dtype="<f8")
    if data.size != n1 * n2:
        raise ValueError(f"truncated grid file {path!r}")
    return data.reshape(n1, n2).copy()
