"""Topological map: nodes at fixed spacing holding a scan, a global
descriptor, and spatial / descriptor nearest-neighbor queries.

On-disk layout:
    <dir>/map.json        manifest: version, spacing, backend, node table
    <dir>/clouds/         one LPCD file per node
    <dir>/descriptors/    one <scan_id>.g.ldsc file per node
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .cloud import PointCloud, PreprocessConfig, preprocess_for_descriptor
from .cloud_io import read_lpcd, write_lpcd
from .errors import BTooLarge, EmptyMap, EmptyTrajectory
from .features import (KIND_GLOBAL, FeatureBackend, GlobalDescriptor, read_ldsc,
                       write_ldsc)
from .geometry import Pose2


@dataclass
class MapNode:
    id: int
    position: tuple[float, float]
    cloud_ref: str
    descriptor: GlobalDescriptor
    yaw_at_capture: float | None = None


class TopoMap:
    """Immutable node set with exact spatial and descriptor k-NN queries."""

    def __init__(self, nodes: list[MapNode], spacing_m: float,
                 cloud_store: dict | None = None, cloud_dir: Path | None = None,
                 backend_name: str = "synthetic"):
        self.nodes = list(nodes)
        self.spacing_m = float(spacing_m)
        self.backend_name = backend_name
        self._cloud_store = cloud_store or {}
        self._cloud_dir = cloud_dir
        if self.nodes:
            self.positions = np.array([n.position for n in self.nodes])
            self.descriptors = np.array([n.descriptor.values for n in self.nodes])
            self._spatial = cKDTree(self.positions)
        else:
            self.positions = np.empty((0, 2))
            self.descriptors = np.empty((0, 0))
            self._spatial = None

    def __len__(self):
        return len(self.nodes)

    def node_by_id(self, node_id: int) -> MapNode:
        return self._by_id[node_id]

    @property
    def _by_id(self):
        if not hasattr(self, "_by_id_cache"):
            self._by_id_cache = {n.id: n for n in self.nodes}
        return self._by_id_cache

    def get_cloud(self, node: MapNode) -> PointCloud:
        if node.cloud_ref in self._cloud_store:
            return self._cloud_store[node.cloud_ref]
        if self._cloud_dir is not None:
            cloud = read_lpcd(self._cloud_dir / f"{node.cloud_ref}.lpcd")
            self._cloud_store[node.cloud_ref] = cloud
            return cloud
        raise KeyError(f"no stored cloud for ref {node.cloud_ref!r}")

    # -- queries ------------------------------------------------------------

    def nearest_node(self, x: float, y: float) -> MapNode:
        """Node minimizing planar Euclidean distance; ties go to lowest id."""
        if not self.nodes:
            raise EmptyMap("map has no nodes")
        d = np.hypot(self.positions[:, 0] - x, self.positions[:, 1] - y)
        best = np.flatnonzero(d <= d.min() + 1e-12)
        idx = min(best, key=lambda i: self.nodes[i].id)
        return self.nodes[idx]

    def nearest_node_indices(self, xy: np.ndarray) -> np.ndarray:
        """Vectorized nearest-node lookup for an (n, 2) array of positions."""
        if self._spatial is None:
            raise EmptyMap("map has no nodes")
        _, idx = self._spatial.query(np.asarray(xy, dtype=float))
        return np.atleast_1d(idx)

    def top_b_descriptor_matches(self, d_query: GlobalDescriptor, b: int):
        """The b nodes closest to d_query in descriptor space, ascending by
        distance, ties broken by node id."""
        if not self.nodes:
            raise EmptyMap("map has no nodes")
        if b < 1:
            raise ValueError("B must be at least 1")
        if b > len(self.nodes):
            raise BTooLarge(f"B={b} exceeds map size {len(self.nodes)}")
        dist = np.linalg.norm(self.descriptors - d_query.values, axis=1)
        ids = np.array([n.id for n in self.nodes])
        order = np.lexsort((ids, dist))[:b]
        return [(self.nodes[i], float(dist[i])) for i in order]


def build_map(trajectory, spacing_m: float, backend: FeatureBackend,
              preprocess_cfg: PreprocessConfig | None = None) -> TopoMap:
    """Greedy node selection along one or more concatenated sessions.

    A scan is kept when its (x, y) lies at least spacing_m from every node
    kept so far. The stored descriptor is computed on the descriptor-path
    preprocessing of the scan; the raw scan itself is stored for
    registration.
    """
    trajectory = list(trajectory)
    if not trajectory:
        raise EmptyTrajectory("map building needs at least one scan")
    if spacing_m <= 0:
        raise ValueError("spacing_m must be positive")
    cfg = preprocess_cfg or PreprocessConfig()
    kept: list[MapNode] = []
    kept_xy: list[tuple[float, float]] = []
    store: dict[str, PointCloud] = {}
    for pose, cloud in trajectory:
        if kept_xy:
            arr = np.array(kept_xy)
            if np.min(np.hypot(arr[:, 0] - pose.x, arr[:, 1] - pose.y)) < spacing_m:
                continue
        node_id = len(kept)
        ref = f"{node_id:06d}"
        desc_cloud = preprocess_for_descriptor(cloud, cfg)
        descriptor = backend.global_descriptor(desc_cloud, scan_id=ref)
        kept.append(MapNode(node_id, (pose.x, pose.y), ref, descriptor, pose.theta))
        kept_xy.append((pose.x, pose.y))
        store[ref] = cloud
    return TopoMap(kept, spacing_m, cloud_store=store, backend_name=backend.name)


# ---------------------------------------------------------------------------
# persistence

def save_map(topo: TopoMap, directory) -> None:
    directory = Path(directory)
    (directory / "clouds").mkdir(parents=True, exist_ok=True)
    (directory / "descriptors").mkdir(exist_ok=True)
    table = []
    for node in topo.nodes:
        table.append({
            "id": node.id,
            "x": node.position[0],
            "y": node.position[1],
            "yaw": node.yaw_at_capture,
            "cloud": f"clouds/{node.cloud_ref}.lpcd",
            "global_descriptor": f"descriptors/{node.cloud_ref}.g.ldsc",
        })
        write_lpcd(directory / "clouds" / f"{node.cloud_ref}.lpcd", topo.get_cloud(node))
        write_ldsc(directory / "descriptors" / f"{node.cloud_ref}.g.ldsc",
                   KIND_GLOBAL, node.descriptor.values[None, :], layer="global")
    manifest = {
        "version": 1,
        "spacing_m": topo.spacing_m,
        "backend": topo.backend_name,
        "nodes": table,
    }
    with open(directory / "map.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_map(directory) -> TopoMap:
    directory = Path(directory)
    with open(directory / "map.json") as f:
        manifest = json.load(f)
    nodes = []
    for row in manifest["nodes"]:
        _, vectors, _, _ = read_ldsc(directory / row["global_descriptor"])
        ref = Path(row["cloud"]).stem
        nodes.append(MapNode(int(row["id"]), (float(row["x"]), float(row["y"])),
                             ref, GlobalDescriptor(vectors[0]), row.get("yaw")))
    return TopoMap(nodes, float(manifest["spacing_m"]),
                   cloud_dir=directory / "clouds",
                   backend_name=manifest.get("backend", "synthetic"))


def export_nodes_csv(topo: TopoMap, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "x", "y", "yaw"])
        for node in topo.nodes:
            writer.writerow([node.id, node.position[0], node.position[1],
                             "" if node.yaw_at_capture is None else node.yaw_at_capture])


def map_node_poses(topo: TopoMap) -> list[Pose2]:
    return [Pose2(n.position[0], n.position[1], n.yaw_at_capture or 0.0)
            for n in topo.nodes]
