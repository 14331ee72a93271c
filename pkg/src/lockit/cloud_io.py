"""Point-cloud file I/O.

Binary format (LPCD, little endian):
    magic  4 bytes  "LPCD"
    version u16     1
    flags   u8      bit 0: intensity block present
    count   u64
    points  count * 3 * float32 (x, y, z)
    intensity (optional) count * float32

Text format: one "x y z" triple per line, whitespace separated, '#' comments.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .cloud import PointCloud

_MAGIC = b"LPCD"
_VERSION = 1
_HEADER = struct.Struct("<4sHBQ")
_FLAG_INTENSITY = 0x01


def write_lpcd(path, cloud: PointCloud) -> None:
    path = Path(path)
    flags = _FLAG_INTENSITY if cloud.intensity is not None else 0
    with open(path, "wb") as f:
        f.write(_HEADER.pack(_MAGIC, _VERSION, flags, len(cloud)))
        f.write(np.ascontiguousarray(cloud.points, dtype="<f4").tobytes())
        if cloud.intensity is not None:
            f.write(np.ascontiguousarray(cloud.intensity, dtype="<f4").tobytes())


def read_lpcd(path) -> PointCloud:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated LPCD header")
    magic, version, flags, count = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported LPCD version {version}")
    offset = _HEADER.size
    n_bytes = count * 12
    if len(data) < offset + n_bytes:
        raise ValueError(f"{path}: truncated point block")
    points = np.frombuffer(data, dtype="<f4", count=count * 3, offset=offset).reshape(-1, 3)
    offset += n_bytes
    intensity = None
    if flags & _FLAG_INTENSITY:
        if len(data) < offset + count * 4:
            raise ValueError(f"{path}: truncated intensity block")
        intensity = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
    return PointCloud(points.astype(np.float64), None if intensity is None else intensity.astype(np.float64))


def read_xyz_text(path) -> PointCloud:
    """Plain-text loader: whitespace-separated x y z per line, '#' comments."""
    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) < 3:
                raise ValueError(f"{path}:{lineno}: expected 3 coordinates, got {len(parts)}")
            try:
                rows.append([float(parts[0]), float(parts[1]), float(parts[2])])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return PointCloud(np.array(rows).reshape(-1, 3))
