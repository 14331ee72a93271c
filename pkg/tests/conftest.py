"""Shared fixtures: a deterministic synthetic benchmark world and a
structured scene for registration tests."""
import math

import numpy as np
import pytest

from lockit import simworld
from lockit.cloud import PointCloud, PreprocessConfig, preprocess_for_descriptor
from lockit.features import SyntheticBackend
from lockit.topomap import build_map

BENCH_SIZE = 60.0
BENCH_SCAN_KW = dict(beam_count=(24, 240), max_range_m=30.0, noise_sigma_m=0.01)
BENCH_PRE = PreprocessConfig(max_range_m=30.0, scale_factor=30.0)


@pytest.fixture(scope="session")
def bench_world():
    return simworld.generate_world(0, 40, (0, 0, BENCH_SIZE, BENCH_SIZE))


@pytest.fixture(scope="session")
def bench(bench_world):
    """200-node map along a loop plus a 150-step query path with scans and
    precomputed query descriptors."""
    m = BENCH_SIZE
    loop = [(8, 8), (m - 8, 8), (m - 8, m - 8), (8, m - 8), (8, 8)]
    map_truth = simworld.waypoint_path(loop, 1.0)
    map_clouds = [simworld.simulate_scan(bench_world, p, seed=i, **BENCH_SCAN_KW)
                  for i, p in enumerate(map_truth)]
    backend = SyntheticBackend()
    topo = build_map(zip(map_truth, map_clouds), 1.0, backend, BENCH_PRE)
    off = [(8.4, 8.3), (m - 8.3, 8.4), (m - 8.4, m - 8.3), (8.3, m - 8.4), (8.4, 8.3)]
    query_truth = simworld.waypoint_path(off, 1.0)[:151]
    query_clouds = [simworld.simulate_scan(bench_world, p, seed=50000 + i, **BENCH_SCAN_KW)
                    for i, p in enumerate(query_truth)]
    query_descs = [backend.global_descriptor(preprocess_for_descriptor(c, BENCH_PRE))
                   for c in query_clouds]
    return {
        "world": bench_world,
        "backend": backend,
        "pre": BENCH_PRE,
        "topo": topo,
        "map_truth": map_truth,
        "query_truth": query_truth,
        "query_clouds": query_clouds,
        "query_descs": query_descs,
    }


def structured_scene_points(rng=None, n_clutter=12, spacing=0.25):
    """Three walls plus clutter boxes, sampled as a point grid. Asymmetric by
    construction so registration has a unique optimum."""
    rng = rng or np.random.default_rng(7)
    pts = []

    def wall(p0, p1, height):
        p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
        length = np.linalg.norm(p1 - p0)
        n_s = max(int(length / spacing), 2)
        n_h = max(int(height / spacing), 2)
        for s in np.linspace(0, 1, n_s):
            base = p0 + s * (p1 - p0)
            for h in np.linspace(0, height, n_h):
                pts.append([base[0], base[1], h])

    wall((-6, -4), (6, -4), 3.0)
    wall((-6, -4), (-6, 5), 2.5)
    wall((-6, 5), (3, 5), 3.5)
    for _ in range(n_clutter):
        c = rng.uniform([-5, -3, 0], [5, 4, 0])
        size = rng.uniform(0.4, 1.2, size=3)
        grid = np.stack(np.meshgrid(*[np.arange(-s / 2, s / 2 + 1e-9, spacing) for s in size],
                                    indexing="ij"), axis=-1).reshape(-1, 3)
        pts.append(grid + c + [0, 0, size[2] / 2])
    flat = [np.asarray(p, float).reshape(-1, 3) for p in pts]
    return np.vstack(flat)


@pytest.fixture(scope="session")
def structured_scene():
    return PointCloud(structured_scene_points())
