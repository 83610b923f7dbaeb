"""Binary field dumps: little-endian header (i64 d, i64 N, f64 t), then
N^d float64 values, row-major."""

from __future__ import annotations

import struct

import numpy as np

_HEADER = struct.Struct("<qqd")


def dump_field(path, d: int, N: int, t: float, values: np.ndarray) -> None:
    values = np.asarray(values, dtype=float)
    if values.shape != (N,) * d:
        raise ValueError(f"field shape {values.shape} inconsistent with d={d}, N={N}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(int(d), int(N), float(t)))
        fh.write(values.astype("<f8").tobytes())


def load_field(path):
    with open(path, "rb") as fh:
        d, N, t = _HEADER.unpack(fh.read(_HEADER.size))
        count = N ** d
        vals = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape((N,) * d).copy()
    return d, N, t, vals
