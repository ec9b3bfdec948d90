"""Binary point-map files.

Layout (little-endian): magic ``PMAP``, u32 version (1), u32 width, u32
height, then ``height * width`` row-major records of four float32 values
``(x, y, z, conf)``.  Invalid pixels are stored as all zeros.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .render import PointMap

MAGIC = b"PMAP"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


class PmapFormatError(ValueError):
    pass


def encode_pmap(pm: PointMap) -> bytes:
    rec = np.zeros((pm.height, pm.width, 4), dtype="<f4")
    valid = pm.valid
    rec[..., :3] = np.where(valid[..., None], pm.points, 0.0)
    rec[..., 3] = np.where(valid, pm.conf, 0.0)
    return _HEADER.pack(MAGIC, VERSION, pm.width, pm.height) + rec.tobytes()


def decode_pmap(data: bytes) -> PointMap:
    if len(data) < _HEADER.size:
        raise PmapFormatError("truncated PMAP header")
    magic, version, width, height = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise PmapFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise PmapFormatError(f"unsupported PMAP version {version}")
    expected = _HEADER.size + width * height * 16
    if len(data) != expected:
        raise PmapFormatError(f"PMAP payload is {len(data)} bytes, expected {expected}")
    rec = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(height, width, 4)
    rec = rec.astype(float)
    if not np.all(np.isfinite(rec)):
        raise PmapFormatError("PMAP contains non-finite values")
    return PointMap(rec[..., :3].copy(), rec[..., 3].copy())


def write_pmap(path, pm: PointMap) -> None:
    Path(path).write_bytes(encode_pmap(pm))


def read_pmap(path) -> PointMap:
    return decode_pmap(Path(path).read_bytes())
