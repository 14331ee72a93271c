"""Scan descriptors: global embeddings for retrieval and per-point local
features for correspondence matching.

Backends share one contract. The synthetic backend computes classical
geometric signatures so the whole pipeline is testable without a trained
network; the file backend serves precomputed vectors written by the offline
exporter in the LDSC format documented below.

LDSC binary format (little endian):
    magic   4 bytes "LDSC"
    version u16     1
    kind    u8      0 = global, 1 = local
    dim     u32
    count   u64
    layer   u16 byte length + UTF-8 name
    payload global: count * dim float32
            local:  count * (3 float32 point + dim float32 feature)
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .cloud import PointCloud
from .errors import BackendUnavailable, EmptyCloud

GLOBAL_DIM = 512
LOCAL_DIM = 192

_LDSC_MAGIC = b"LDSC"
_LDSC_VERSION = 1
_LDSC_HEADER = struct.Struct("<4sHBIQ")
KIND_GLOBAL = 0
KIND_LOCAL = 1


class GlobalDescriptor:
    """Fixed-length real embedding of a whole scan."""

    __slots__ = ("values",)

    def __init__(self, values):
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(values)):
            raise ValueError("descriptor entries must be finite")
        self.values = values
        self.values.setflags(write=False)

    def __len__(self):
        return self.values.shape[0]

    def distance(self, other: "GlobalDescriptor") -> float:
        return float(np.linalg.norm(self.values - other.values))


class LocalFeatureCloud:
    """Per-point feature vectors co-registered with their 3D points."""

    __slots__ = ("points", "features")

    def __init__(self, points, features):
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] != points.shape[0]:
            raise ValueError("one feature vector per point required")
        self.points = points
        self.features = features
        self.points.setflags(write=False)
        self.features.setflags(write=False)

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


# ---------------------------------------------------------------------------
# synthetic signatures

def synthetic_global(cloud: PointCloud) -> GlobalDescriptor:
    """Rotation-invariant scan signature.

    Combines the azimuthal-FFT magnitude of a polar occupancy grid (circular
    shifts from yawing the scan leave it unchanged) with radial and height
    histograms. Expects a descriptor-preprocessed cloud (coordinates roughly
    in [-1, 1]^3). Output is L2-normalized and exactly GLOBAL_DIM long.
    """
    if len(cloud) == 0:
        raise EmptyCloud("cannot describe an empty cloud")
    pts = cloud.points
    r_xy = np.hypot(pts[:, 0], pts[:, 1])
    phi = np.arctan2(pts[:, 1], pts[:, 0])
    z = pts[:, 2]
    n = float(len(cloud))
    n_az, n_ring, n_freq = 40, 10, 10
    az_idx = np.clip(((phi + np.pi) / (2 * np.pi) * n_az).astype(np.int64), 0, n_az - 1)
    ring_idx = np.clip((r_xy / 1.1 * n_ring).astype(np.int64), 0, n_ring - 1)
    grid = np.zeros((n_ring, n_az))
    np.add.at(grid, (ring_idx, az_idx), 1.0)
    grid = np.log1p(grid)
    spectrum = np.abs(np.fft.rfft(grid, axis=1))[:, :n_freq]
    spectrum = spectrum / max(np.linalg.norm(spectrum), 1e-12) * 2.0
    h_r, _ = np.histogram(np.linalg.norm(pts, axis=1), bins=32, range=(0.0, 1.2))
    h_z, _ = np.histogram(z, bins=32, range=(-1.0, 1.0))
    h_r = h_r / n
    h_z = h_z / n
    h_r = h_r / max(np.linalg.norm(h_r), 1e-12) * 0.5
    h_z = h_z / max(np.linalg.norm(h_z), 1e-12) * 0.5
    vec = np.concatenate([spectrum.ravel(), h_r, h_z,
                          np.zeros(GLOBAL_DIM - n_ring * n_freq - 64)])
    norm = np.linalg.norm(vec)
    if norm > 0:
        vec = vec / norm
    return GlobalDescriptor(vec)


def _row_histogram(values: np.ndarray, n_bins: int, lo: float, hi: float) -> np.ndarray:
    """Per-row histogram of a (n, k) array, counts normalized by k."""
    n, k = values.shape
    idx = np.clip(((values - lo) / (hi - lo) * n_bins).astype(np.int64), 0, n_bins - 1)
    flat = np.bincount((np.arange(n)[:, None] * n_bins + idx).ravel(), minlength=n * n_bins)
    return flat.reshape(n, n_bins) / k


def synthetic_local(cloud: PointCloud, k_neighbors: int = 40,
                    normalize: bool = False) -> LocalFeatureCloud:
    """Per-point signature of the local neighborhood geometry.

    Each feature concatenates distance / relative-height / planar-radius
    histograms of the k nearest neighbors with PCA shape ratios, yielding a
    vector invariant to planar rigid motion of the whole cloud. Dimension is
    always LOCAL_DIM.
    """
    if len(cloud) == 0:
        raise EmptyCloud("cannot describe an empty cloud")
    pts = cloud.points
    n = len(cloud)
    k = min(k_neighbors, n)
    tree = cKDTree(pts)
    dist, nbr = tree.query(pts, k=k)
    if k == 1:
        dist = dist[:, None]
        nbr = nbr[:, None]
    nbh = pts[nbr]                                  # (n, k, 3)
    rel = nbh - pts[:, None, :]
    relz = rel[:, :, 2]
    relxy = np.hypot(rel[:, :, 0], rel[:, :, 1])

    h_d = _row_histogram(dist, 64, 0.0, 4.0)
    h_z = _row_histogram(relz, 64, -3.0, 3.0)
    h_xy = _row_histogram(relxy, 32, 0.0, 4.0)

    centered = nbh - nbh.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    evals = np.linalg.eigvalsh(cov)                 # ascending
    evals = np.maximum(evals[:, ::-1], 0.0)         # descending
    total = evals.sum(axis=1) + 1e-12
    lam = evals / total[:, None]
    linearity = (evals[:, 0] - evals[:, 1]) / (evals[:, 0] + 1e-12)
    planarity = (evals[:, 1] - evals[:, 2]) / (evals[:, 0] + 1e-12)
    sphericity = evals[:, 2] / (evals[:, 0] + 1e-12)
    height_off = pts[:, 2] - nbh[:, :, 2].mean(axis=1)
    radius = dist[:, -1]
    shape = np.stack([lam[:, 0], lam[:, 1], lam[:, 2], linearity, planarity,
                      sphericity, height_off, radius], axis=1)

    feats = np.concatenate([h_d, h_z, h_xy, shape,
                            np.zeros((n, LOCAL_DIM - 64 - 64 - 32 - 8))], axis=1)
    if normalize:
        feats = feats / (np.linalg.norm(feats, axis=1, keepdims=True) + 1e-12)
    return LocalFeatureCloud(pts, feats)


# ---------------------------------------------------------------------------
# backends

class FeatureBackend:
    """Uniform descriptor-producer contract.

    Instances are read-only after construction and declare fixed output
    dimensions; callers may use them concurrently.
    """

    name: str = "abstract"
    global_dim: int = GLOBAL_DIM
    local_dim: int = LOCAL_DIM

    def global_descriptor(self, cloud: PointCloud, scan_id: str | None = None) -> GlobalDescriptor:
        raise NotImplementedError

    def local_features(self, cloud: PointCloud, scan_id: str | None = None) -> LocalFeatureCloud:
        raise NotImplementedError


class SyntheticBackend(FeatureBackend):
    """Hermetic classical backend; ignores scan ids."""

    name = "synthetic"

    def __init__(self, k_neighbors: int = 40, normalize_local: bool = False):
        self.k_neighbors = k_neighbors
        self.normalize_local = normalize_local

    def global_descriptor(self, cloud, scan_id=None):
        return synthetic_global(cloud)

    def local_features(self, cloud, scan_id=None):
        return synthetic_local(cloud, self.k_neighbors, self.normalize_local)


class FileBackend(FeatureBackend):
    """Serves precomputed LDSC files from a directory, keyed by scan id."""

    name = "file"

    def __init__(self, directory, global_dim: int = GLOBAL_DIM, local_dim: int = LOCAL_DIM):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise BackendUnavailable(f"descriptor directory not found: {self.directory}")
        self.global_dim = global_dim
        self.local_dim = local_dim

    def global_descriptor(self, cloud, scan_id=None):
        if scan_id is None:
            raise BackendUnavailable("file backend requires a scan id")
        path = self.directory / f"{scan_id}.g.ldsc"
        if not path.exists():
            raise BackendUnavailable(f"missing global descriptor file: {path}")
        kind, vectors, _, _ = read_ldsc(path)
        if kind != KIND_GLOBAL:
            raise BackendUnavailable(f"{path}: not a global descriptor file")
        desc = GlobalDescriptor(vectors[0])
        if len(desc) != self.global_dim:
            raise BackendUnavailable(
                f"{path}: dimension {len(desc)} != declared {self.global_dim}")
        return desc

    def local_features(self, cloud, scan_id=None):
        if scan_id is None:
            raise BackendUnavailable("file backend requires a scan id")
        path = self.directory / f"{scan_id}.l.ldsc"
        if not path.exists():
            raise BackendUnavailable(f"missing local feature file: {path}")
        kind, features, points, _ = read_ldsc(path)
        if kind != KIND_LOCAL:
            raise BackendUnavailable(f"{path}: not a local feature file")
        lfc = LocalFeatureCloud(points, features)
        if lfc.dim != self.local_dim:
            raise BackendUnavailable(
                f"{path}: dimension {lfc.dim} != declared {self.local_dim}")
        return lfc


# ---------------------------------------------------------------------------
# LDSC I/O

def write_ldsc(path, kind: int, vectors: np.ndarray, points: np.ndarray | None = None,
               layer: str = "") -> None:
    """Write one LDSC file. For kind=KIND_LOCAL, points must be (count, 3)."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2:
        raise ValueError("vectors must be (count, dim)")
    count, dim = vectors.shape
    layer_bytes = layer.encode("utf-8")
    with open(path, "wb") as f:
        f.write(_LDSC_HEADER.pack(_LDSC_MAGIC, _LDSC_VERSION, kind, dim, count))
        f.write(struct.pack("<H", len(layer_bytes)))
        f.write(layer_bytes)
        if kind == KIND_GLOBAL:
            f.write(np.ascontiguousarray(vectors, dtype="<f4").tobytes())
        elif kind == KIND_LOCAL:
            points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
            if points.shape[0] != count:
                raise ValueError("one point per feature vector required")
            interleaved = np.hstack([points, vectors]).astype("<f4")
            f.write(np.ascontiguousarray(interleaved).tobytes())
        else:
            raise ValueError(f"unknown LDSC kind {kind}")


def read_ldsc(path):
    """Read an LDSC file; returns (kind, vectors, points_or_None, layer)."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _LDSC_HEADER.size + 2:
        raise ValueError(f"{path}: truncated LDSC header")
    magic, version, kind, dim, count = _LDSC_HEADER.unpack_from(data)
    if magic != _LDSC_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != _LDSC_VERSION:
        raise ValueError(f"{path}: unsupported LDSC version {version}")
    offset = _LDSC_HEADER.size
    (layer_len,) = struct.unpack_from("<H", data, offset)
    offset += 2
    layer = data[offset:offset + layer_len].decode("utf-8")
    offset += layer_len
    if kind == KIND_GLOBAL:
        payload = np.frombuffer(data, dtype="<f4", count=count * dim, offset=offset)
        return kind, payload.reshape(count, dim).astype(np.float64), None, layer
    if kind == KIND_LOCAL:
        payload = np.frombuffer(data, dtype="<f4", count=count * (dim + 3), offset=offset)
        payload = payload.reshape(count, dim + 3).astype(np.float64)
        return kind, payload[:, 3:], payload[:, :3], layer
    raise ValueError(f"{path}: unknown LDSC kind {kind}")
