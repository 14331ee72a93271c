"""Binary file formats shared with the localization toolkit.

The exporter deliberately reimplements both formats from their published
byte-level descriptions instead of importing the toolkit, so the two sides
only ever agree through the files themselves.

LPCD (input scans, little endian):
    magic "LPCD", version u16=1, flags u8 (bit 0: intensity block),
    count u64, count*3 float32 points, optional count float32 intensity.

LDSC (output descriptors, little endian):
    magic "LDSC", version u16=1, kind u8 (0 global, 1 local), dim u32,
    count u64, layer name (u16 byte length + UTF-8), payload:
    global = count*dim float32; local = count*(3 point + dim feature) float32.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ScanParseError

_LPCD_HEADER = struct.Struct("<4sHBQ")
_LDSC_HEADER = struct.Struct("<4sHBIQ")
KIND_GLOBAL = 0
KIND_LOCAL = 1


def read_lpcd(path) -> np.ndarray:
    """Load the (n, 3) point block of an LPCD file."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _LPCD_HEADER.size:
        raise ScanParseError(f"{path}: truncated LPCD header")
    magic, version, flags, count = _LPCD_HEADER.unpack_from(data)
    if magic != b"LPCD":
        raise ScanParseError(f"{path}: bad magic {magic!r}")
    if version != 1:
        raise ScanParseError(f"{path}: unsupported LPCD version {version}")
    if len(data) < _LPCD_HEADER.size + count * 12:
        raise ScanParseError(f"{path}: truncated point block")
    points = np.frombuffer(data, dtype="<f4", count=count * 3,
                           offset=_LPCD_HEADER.size)
    return points.reshape(-1, 3).astype(np.float64)


def ldsc_bytes(kind: int, vectors: np.ndarray, points: np.ndarray | None,
               layer: str) -> bytes:
    """Serialize one LDSC document."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2:
        raise ValueError("vectors must be (count, dim)")
    count, dim = vectors.shape
    layer_bytes = layer.encode("utf-8")
    parts = [_LDSC_HEADER.pack(b"LDSC", 1, kind, dim, count),
             struct.pack("<H", len(layer_bytes)), layer_bytes]
    if kind == KIND_GLOBAL:
        parts.append(np.ascontiguousarray(vectors, dtype="<f4").tobytes())
    elif kind == KIND_LOCAL:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if points.shape[0] != count:
            raise ValueError("one point per feature vector required")
        parts.append(np.ascontiguousarray(np.hstack([points, vectors]),
                                          dtype="<f4").tobytes())
    else:
        raise ValueError(f"unknown LDSC kind {kind}")
    return b"".join(parts)


def read_ldsc(path):
    """Parse an LDSC file back into (kind, vectors, points_or_None, layer)."""
    data = Path(path).read_bytes()
    magic, version, kind, dim, count = _LDSC_HEADER.unpack_from(data)
    if magic != b"LDSC" or version != 1:
        raise ValueError(f"{path}: not a version-1 LDSC file")
    offset = _LDSC_HEADER.size
    (layer_len,) = struct.unpack_from("<H", data, offset)
    offset += 2
    layer = data[offset:offset + layer_len].decode("utf-8")
    offset += layer_len
    if kind == KIND_GLOBAL:
        payload = np.frombuffer(data, dtype="<f4", count=count * dim, offset=offset)
        return kind, payload.reshape(count, dim).astype(np.float64), None, layer
    payload = np.frombuffer(data, dtype="<f4", count=count * (dim + 3), offset=offset)
    payload = payload.reshape(count, dim + 3).astype(np.float64)
    return kind, payload[:, 3:], payload[:, :3], layer
