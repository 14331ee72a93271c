"""Offline LiDAR descriptor exporter.

Reads LPCD scan files, runs a deterministic descriptor model, and writes
LDSC descriptor files consumable by localization tooling.
"""
from . import cli
from .errors import ExporterError, ModelLoadError, ScanParseError
from .formats import KIND_GLOBAL, KIND_LOCAL, read_ldsc, read_lpcd
from .model import GLOBAL_DIM, LOCAL_DIM, DescriptorModel, write_default_weights

__all__ = [
    "cli", "ExporterError", "ModelLoadError", "ScanParseError",
    "KIND_GLOBAL", "KIND_LOCAL", "read_ldsc", "read_lpcd",
    "GLOBAL_DIM", "LOCAL_DIM", "DescriptorModel", "write_default_weights",
]
