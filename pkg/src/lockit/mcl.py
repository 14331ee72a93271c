"""Topological Monte Carlo localization.

Particles live on map nodes: after every motion update their (x, y) is
snapped to the nearest node while the heading stays continuous. Weights come
from descriptor retrieval: the current scan descriptor selects the top-B map
nodes, and each particle is scored by a product of a metric kernel (particle
to retrieved node) and a descriptor kernel (particle's node descriptor to
retrieved node descriptor), summed over the B retrievals.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AllZeroWeights, EmptyMap, EmptySet
from .features import GlobalDescriptor
from .geometry import OdometryDelta, Pose2, wrap_angle
from .topomap import TopoMap


@dataclass
class MclConfig:
    """Filter tuning constants.

    sigma_d_frac is the motion-noise std as a fraction of the travelled
    distance; sigma_theta is the absolute heading-noise std in radians.
    The descriptor kernel defaults to exp(-h^2 / sigma_m^2); set
    raw_descriptor_kernel to use exp(-h^2 * sigma_m) instead.
    """

    m_particles: int = 200
    b_retrieval: int = 5
    sigma_l: float = 3.0
    sigma_m: float = 0.3
    step_distance_m: float = 1.0
    burn_in_iters: int = 20
    sigma_d_frac: float = 0.15
    sigma_theta: float = math.radians(10.0)
    seed: int = 0
    resampling: str = "multinomial"
    raw_descriptor_kernel: bool = False

    def __post_init__(self):
        if self.m_particles < 1 or self.b_retrieval < 1:
            raise ValueError("m_particles and b_retrieval must be positive")
        if min(self.sigma_l, self.sigma_m, self.step_distance_m) <= 0:
            raise ValueError("kernel widths and step distance must be positive")
        if self.resampling not in ("multinomial", "systematic"):
            raise ValueError(f"unknown resampling scheme {self.resampling!r}")


@dataclass
class ParticleSet:
    """Weighted pose hypotheses stored as parallel arrays of size M."""

    xy: np.ndarray                # (M, 2), always on node positions
    theta: np.ndarray             # (M,)
    weights: np.ndarray           # (M,), non-negative
    node_idx: np.ndarray          # (M,) indices into map.nodes
    rng: np.random.Generator = field(repr=False, default=None)

    def __len__(self):
        return self.xy.shape[0]

    def copy(self) -> "ParticleSet":
        return ParticleSet(self.xy.copy(), self.theta.copy(), self.weights.copy(),
                           self.node_idx.copy(), self.rng)

    @property
    def effective_sample_size(self) -> float:
        total = self.weights.sum()
        if total <= 0:
            return 0.0
        w = self.weights / total
        return float(1.0 / np.sum(w * w))


def init_particles(topo: TopoMap, cfg: MclConfig) -> ParticleSet:
    """Place particles on node positions with uniform random headings.

    M == N puts one particle per node; M > N cycles through the nodes;
    M < N samples nodes uniformly without replacement.
    """
    n = len(topo)
    if n == 0:
        raise EmptyMap("cannot initialize particles on an empty map")
    m = cfg.m_particles
    rng = np.random.default_rng(cfg.seed)
    if m >= n:
        node_idx = np.arange(m) % n
    else:
        node_idx = rng.choice(n, size=m, replace=False)
    xy = topo.positions[node_idx].copy()
    # uniform over (-pi, pi]
    theta = np.pi - rng.random(m) * 2.0 * np.pi
    weights = np.full(m, 1.0 / m)
    return ParticleSet(xy, theta, weights, node_idx.astype(np.int64), rng)


def predict(pset: ParticleSet, u: OdometryDelta, topo: TopoMap, cfg: MclConfig) -> ParticleSet:
    """Propagate every particle with the odometry motion model, then snap
    (x, y) to the nearest map node. Headings stay continuous."""
    m = len(pset)
    rng = pset.rng
    d = u.distance
    d_noisy = d + rng.normal(0.0, cfg.sigma_d_frac * d, size=m) if d > 0 else np.zeros(m)
    dtheta_noisy = u.dtheta + rng.normal(0.0, cfg.sigma_theta, size=m)
    heading = pset.theta + dtheta_noisy
    x = pset.xy[:, 0] + d_noisy * np.cos(heading)
    y = pset.xy[:, 1] + d_noisy * np.sin(heading)
    if d == 0 and u.dtheta == 0:
        # zero delta: leave the set untouched (snapping is idempotent)
        return ParticleSet(pset.xy.copy(), pset.theta.copy(), pset.weights.copy(),
                           pset.node_idx.copy(), rng)
    node_idx = topo.nearest_node_indices(np.stack([x, y], axis=1))
    xy = topo.positions[node_idx].copy()
    theta = np.array([wrap_angle(t) for t in heading])
    return ParticleSet(xy, theta, pset.weights.copy(), node_idx.astype(np.int64), rng)


def _kernel_weights(v: np.ndarray, h: np.ndarray, cfg: MclConfig) -> np.ndarray:
    """Summed product kernel over the B retrievals.

    v: (M, B, 2) metric offsets, h: (M, B) descriptor distances.
    """
    metric = np.exp(-(v[..., 0] ** 2 + v[..., 1] ** 2) / cfg.sigma_l ** 2)
    if cfg.raw_descriptor_kernel:
        desc = np.exp(-(h ** 2) * cfg.sigma_m)
    else:
        desc = np.exp(-(h ** 2) / cfg.sigma_m ** 2)
    return (metric * desc).sum(axis=1)


def update_weights(pset: ParticleSet, d_query: GlobalDescriptor, topo: TopoMap,
                   cfg: MclConfig) -> ParticleSet:
    """Descriptor-retrieval observation model; weights renormalized to 1."""
    matches = topo.top_b_descriptor_matches(d_query, cfg.b_retrieval)
    node_pos = np.array([node.position for node, _ in matches])          # (B, 2)
    node_desc = np.array([node.descriptor.values for node, _ in matches])  # (B, D)
    part_desc = topo.descriptors[pset.node_idx]                          # (M, D)
    v = node_pos[None, :, :] - pset.xy[:, None, :]                       # (M, B, 2)
    h = np.linalg.norm(node_desc[None, :, :] - part_desc[:, None, :], axis=2)
    w = _kernel_weights(v, h, cfg)
    total = w.sum()
    if total <= 0 or not np.isfinite(total):
        raise AllZeroWeights("all particle weights vanished")
    return ParticleSet(pset.xy.copy(), pset.theta.copy(), w / total,
                       pset.node_idx.copy(), pset.rng)


def update_weights_oracle(pset: ParticleSet, d_query: GlobalDescriptor, topo: TopoMap,
                          cfg: MclConfig) -> np.ndarray:
    """Scalar double-loop reference for the observation model (normalized)."""
    matches = topo.top_b_descriptor_matches(d_query, cfg.b_retrieval)
    weights = []
    for i in range(len(pset)):
        xi, yi = pset.xy[i]
        di = topo.descriptors[pset.node_idx[i]]
        w = 0.0
        for node, _ in matches:
            vx = node.position[0] - xi
            vy = node.position[1] - yi
            h = math.sqrt(float(np.sum((node.descriptor.values - di) ** 2)))
            metric = math.exp(-(vx * vx + vy * vy) / (cfg.sigma_l ** 2))
            if cfg.raw_descriptor_kernel:
                desc = math.exp(-(h * h) * cfg.sigma_m)
            else:
                desc = math.exp(-(h * h) / (cfg.sigma_m ** 2))
            w += metric * desc
        weights.append(w)
    weights = np.array(weights)
    return weights / weights.sum()


def resample(pset: ParticleSet, scheme: str | None = None) -> ParticleSet:
    """Draw M particles with replacement proportionally to the weights;
    output weights are uniform."""
    total = pset.weights.sum()
    if total <= 0:
        raise AllZeroWeights("cannot resample a zero-weight set")
    m = len(pset)
    w = pset.weights / total
    scheme = scheme or "multinomial"
    if scheme == "multinomial":
        ancestors = pset.rng.choice(m, size=m, replace=True, p=w)
    elif scheme == "systematic":
        positions = (np.arange(m) + pset.rng.random()) / m
        ancestors = np.searchsorted(np.cumsum(w), positions)
        ancestors = np.clip(ancestors, 0, m - 1)
    else:
        raise ValueError(f"unknown resampling scheme {scheme!r}")
    return ParticleSet(pset.xy[ancestors].copy(), pset.theta[ancestors].copy(),
                       np.full(m, 1.0 / m), pset.node_idx[ancestors].copy(), pset.rng)


def estimate(pset: ParticleSet) -> Pose2:
    """Mean particle position with a circular mean for the heading."""
    if len(pset) == 0:
        raise EmptySet("cannot estimate from an empty particle set")
    x = float(pset.xy[:, 0].mean())
    y = float(pset.xy[:, 1].mean())
    theta = math.atan2(float(np.sin(pset.theta).sum()), float(np.cos(pset.theta).sum()))
    return Pose2(x, y, theta)


def step(pset: ParticleSet, u: OdometryDelta, d_query: GlobalDescriptor,
         topo: TopoMap, cfg: MclConfig):
    """One filter iteration: predict, weight, resample, estimate."""
    pset = predict(pset, u, topo, cfg)
    pset = update_weights(pset, d_query, topo, cfg)
    pset = resample(pset, cfg.resampling)
    return pset, estimate(pset)
