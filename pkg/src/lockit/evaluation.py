"""Error metrics and table generation for localization runs.

Position error is planar Euclidean distance; orientation error is the
absolute yaw difference wrapped into [0, 180] degrees. Aggregates are always
recomputable from the persisted per-query records.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from matplotlib.path import Path as MplPath

from .errors import EmptyInput
from .geometry import Pose2, angular_difference_deg


@dataclass
class ErrorRecord:
    index: int
    pos_error_m: float
    yaw_error_deg: float
    tag: str = ""


def pose_errors(estimate: Pose2, truth: Pose2) -> tuple[float, float]:
    pos = math.hypot(estimate.x - truth.x, estimate.y - truth.y)
    yaw = angular_difference_deg(math.degrees(estimate.theta), math.degrees(truth.theta))
    return pos, yaw


def compute_records(estimates, truths, tags=None) -> list[ErrorRecord]:
    if len(estimates) != len(truths):
        raise ValueError("estimate and truth counts differ")
    records = []
    for i, (est, tru) in enumerate(zip(estimates, truths)):
        pos, yaw = pose_errors(est, tru)
        tag = tags[i] if tags else ""
        records.append(ErrorRecord(i, pos, yaw, tag))
    return records


def aggregate(records: list[ErrorRecord]) -> dict:
    """Median / mean / std of position and orientation errors."""
    if not records:
        raise EmptyInput("no error records to aggregate")
    pos = np.array([r.pos_error_m for r in records])
    yaw = np.array([r.yaw_error_deg for r in records])
    return {
        "count": len(records),
        "pos_median_m": float(np.median(pos)),
        "pos_mean_m": float(np.mean(pos)),
        "pos_std_m": float(np.std(pos)),
        "yaw_median_deg": float(np.median(yaw)),
        "yaw_mean_deg": float(np.mean(yaw)),
        "yaw_std_deg": float(np.std(yaw)),
    }


def aggregate_by_tag(records: list[ErrorRecord]) -> dict:
    out = {"overall": aggregate(records)}
    tags = sorted({r.tag for r in records if r.tag})
    for tag in tags:
        out[tag] = aggregate([r for r in records if r.tag == tag])
    return out


# ---------------------------------------------------------------------------
# persistence

RECORD_FIELDS = ["index", "pos_error_m", "yaw_error_deg", "tag"]


def write_records_csv(records: list[ErrorRecord], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(RECORD_FIELDS)
        for r in records:
            writer.writerow([r.index, repr(r.pos_error_m), repr(r.yaw_error_deg), r.tag])


def read_records_csv(path) -> list[ErrorRecord]:
    records = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            records.append(ErrorRecord(int(row["index"]), float(row["pos_error_m"]),
                                       float(row["yaw_error_deg"]), row.get("tag", "")))
    return records


def format_table(named_aggregates: dict) -> str:
    """Rows of median/mean position and orientation error per session."""
    header = (f"{'SESSION':<24} {'median [m]':>12} {'mean [m]':>12} "
              f"{'median [deg]':>14} {'mean [deg]':>12} {'count':>8}")
    lines = [header, "-" * len(header)]
    for name, agg in named_aggregates.items():
        lines.append(f"{name:<24} {agg['pos_median_m']:>12.3f} {agg['pos_mean_m']:>12.3f} "
                     f"{agg['yaw_median_deg']:>14.3f} {agg['yaw_mean_deg']:>12.3f} "
                     f"{agg['count']:>8d}")
    return "\n".join(lines) + "\n"


def write_table_csv(named_aggregates: dict, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["session", "pos_median_m", "pos_mean_m", "pos_std_m",
                         "yaw_median_deg", "yaw_mean_deg", "yaw_std_deg", "count"])
        for name, agg in named_aggregates.items():
            writer.writerow([name, agg["pos_median_m"], agg["pos_mean_m"], agg["pos_std_m"],
                             agg["yaw_median_deg"], agg["yaw_mean_deg"], agg["yaw_std_deg"],
                             agg["count"]])


# ---------------------------------------------------------------------------
# indoor/outdoor region tagging

def load_regions(path) -> list[tuple[str, MplPath]]:
    """Region file: JSON list of {"tag": ..., "polygon": [[x, y], ...]}."""
    doc = json.loads(Path(path).read_text())
    return [(row["tag"], MplPath(np.asarray(row["polygon"], dtype=float)))
            for row in doc]


def tag_positions(xy: np.ndarray, regions: list[tuple[str, MplPath]],
                  default: str = "outdoor") -> list[str]:
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    tags = [default] * len(xy)
    for tag, poly in regions:
        inside = poly.contains_points(xy)
        for i in np.flatnonzero(inside):
            tags[i] = tag
    return tags
