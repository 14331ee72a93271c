"""Deterministic descriptor model.

A stand-in for a learned embedding network: hand-crafted per-scan and
per-point statistics pushed through fixed random projection layers loaded
from an npz weights file.  Everything is pure numpy and bit-reproducible,
which is what the export pipeline actually needs to guarantee.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ModelLoadError

GLOBAL_DIM = 512
LOCAL_DIM = 192
_GLOBAL_STATS = 128   # radial/height histogram feature width
_LOCAL_STATS = 48     # per-point neighborhood feature width

# layer name -> (weights key prefix) for the local head; the global head is
# shared.  Only one local layer is trained in this stand-in, but the naming
# mirrors the multi-layer checkpoints the format was designed around.
LAYERS = ("transpose-conv-1", "transpose-conv-2")


def write_default_weights(path, seed: int = 0) -> None:
    """Create a weights file with orthonormal-ish random projections."""
    rng = np.random.default_rng(seed)
    arrays = {
        "w_global": rng.normal(size=(_GLOBAL_STATS, GLOBAL_DIM)) / np.sqrt(_GLOBAL_STATS),
        "b_global": rng.normal(size=GLOBAL_DIM) * 0.01,
    }
    for layer in LAYERS:
        key = layer.replace("-", "_")
        arrays[f"w_{key}"] = rng.normal(size=(_LOCAL_STATS, LOCAL_DIM)) / np.sqrt(_LOCAL_STATS)
        arrays[f"b_{key}"] = rng.normal(size=LOCAL_DIM) * 0.01
    np.savez(path, **arrays)


class DescriptorModel:
    """Weights holder that maps point clouds to global/local descriptors."""

    def __init__(self, weights_path, layer: str = "transpose-conv-2"):
        if layer not in LAYERS:
            raise ModelLoadError(f"unknown layer {layer!r}; expected one of {LAYERS}")
        weights_path = Path(weights_path)
        if not weights_path.is_file():
            raise ModelLoadError(f"weights file not found: {weights_path}")
        try:
            with np.load(weights_path) as npz:
                key = layer.replace("-", "_")
                self.w_global = npz["w_global"]
                self.b_global = npz["b_global"]
                self.w_local = npz[f"w_{key}"]
                self.b_local = npz[f"b_{key}"]
        except (KeyError, ValueError, OSError) as exc:
            raise ModelLoadError(f"invalid weights file {weights_path}: {exc}") from exc
        if self.w_global.shape != (_GLOBAL_STATS, GLOBAL_DIM):
            raise ModelLoadError(
                f"w_global has shape {self.w_global.shape}, "
                f"expected {(_GLOBAL_STATS, GLOBAL_DIM)}")
        if self.w_local.shape != (_LOCAL_STATS, LOCAL_DIM):
            raise ModelLoadError(
                f"local weights have shape {self.w_local.shape}, "
                f"expected {(_LOCAL_STATS, LOCAL_DIM)}")
        self.layer = layer

    def global_descriptor(self, points: np.ndarray) -> np.ndarray:
        """L2-normalized (GLOBAL_DIM,) embedding of a whole scan."""
        stats = _global_stats(points)
        vec = np.tanh(stats @ self.w_global + self.b_global)
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec

    def local_features(self, points: np.ndarray) -> np.ndarray:
        """(n, LOCAL_DIM) embedding, one row per input point."""
        stats = _local_stats(points)
        return np.tanh(stats @ self.w_local + self.b_local)


def _global_stats(points: np.ndarray) -> np.ndarray:
    if len(points) == 0:
        return np.zeros(_GLOBAL_STATS)
    radius = np.linalg.norm(points[:, :2], axis=1)
    rmax = max(radius.max(), 1e-9)
    r_hist, _ = np.histogram(radius, bins=64, range=(0.0, rmax))
    z = points[:, 2]
    zlo, zhi = z.min(), z.max()
    z_hist, _ = np.histogram(z, bins=64, range=(zlo, zhi + 1e-9))
    stats = np.concatenate([r_hist, z_hist]).astype(np.float64)
    return np.log1p(stats) / np.log1p(len(points))


def _local_stats(points: np.ndarray) -> np.ndarray:
    """Per-point statistics from the k nearest neighbors (k=16)."""
    n = len(points)
    if n == 0:
        return np.zeros((0, _LOCAL_STATS))
    k = min(16, n)
    # brute-force distances are fine at export batch sizes
    d2 = np.sum((points[:, None, :] - points[None, :, :]) ** 2, axis=2)
    idx = np.argsort(d2, axis=1, kind="stable")[:, :k]
    neigh = points[idx]                                   # (n, k, 3)
    rel = neigh - points[:, None, :]
    dist = np.linalg.norm(rel, axis=2)
    out = np.zeros((n, _LOCAL_STATS))
    out[:, 0:16] = np.sort(dist, axis=1)[:, :16] if k == 16 else np.pad(
        np.sort(dist, axis=1), ((0, 0), (0, 16 - k)))
    centered = neigh - neigh.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    eigvals = np.linalg.eigvalsh(cov)                     # ascending, (n, 3)
    out[:, 16:19] = eigvals
    out[:, 19] = rel[:, :, 2].mean(axis=1)
    out[:, 20] = rel[:, :, 2].std(axis=1)
    out[:, 21] = dist.mean(axis=1)
    out[:, 22] = dist.std(axis=1)
    out[:, 23] = np.linalg.norm(rel[:, :, :2], axis=2).mean(axis=1)
    for j in range(8):
        lo, hi = j * 0.25, (j + 1) * 0.25
        out[:, 24 + j] = np.mean((dist >= lo) & (dist < hi), axis=1)
        out[:, 32 + j] = np.mean((np.abs(rel[:, :, 2]) >= lo)
                                 & (np.abs(rel[:, :, 2]) < hi), axis=1)
    out[:, 40] = points[:, 2]
    out[:, 41] = np.linalg.norm(points[:, :2], axis=1)
    # remaining slots stay zero; reserved for richer statistics
    return out
