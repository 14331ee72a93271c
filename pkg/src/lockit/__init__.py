"""Coarse-to-fine LiDAR localization toolkit.

Coarse localization runs topological Monte Carlo localization over a node
map with a descriptor-retrieval observation model; fine localization refines
the result with point-to-plane ICP or seed-free feature-correspondence
RANSAC. A deterministic simulator and an evaluation harness support
desk-scale benchmarking.
"""

from .cloud import (NormalCloud, PointCloud, PreprocessConfig, crop_range,
                    center_and_scale, estimate_normals, preprocess_for_descriptor,
                    preprocess_for_registration, remove_ground, voxel_downsample)
from .features import (FileBackend, GlobalDescriptor, LocalFeatureCloud,
                       SyntheticBackend, synthetic_global, synthetic_local)
from .geometry import (OdometryDelta, Pose2, RigidTransform3, wrap_angle,
                       yaw_from_consecutive)
from .mcl import MclConfig, ParticleSet, estimate, init_particles, predict, resample, step, update_weights
from .registration import (Correspondence, RegistrationResult, fine_localize_dlf,
                           fine_localize_icp, icp_point_to_plane, match_features,
                           ransac_register, solve_rigid_svd)
from .topomap import MapNode, TopoMap, build_map, load_map, save_map

__version__ = "0.1.0"
