"""Command-line front end: map building, localization runs, error tables
and plots.

Session directory layout (shared by maps, queries and the simulator):
    poses.csv       ground-truth poses, one "x,y,theta" row per scan
    odometry.csv    optional noisy relative deltas "dx,dy,dtheta"
    clouds/         one LPCD file per pose, named 000000.lpcd, ...

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime error.
Set LOCKIT_LOG=debug|info|warning for verbosity.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import evaluation, mcl, simworld
from .cloud import PreprocessConfig, preprocess_for_descriptor
from .cloud_io import read_lpcd, write_lpcd
from .errors import DegenerateGeometry, EmptyCorrespondences, LockitError
from .features import FileBackend, SyntheticBackend
from .geometry import OdometryDelta, Pose2
from .registration import (FineResult, MapRegistrationCache, fine_localize_dlf,
                           fine_localize_icp)
from .topomap import build_map, export_nodes_csv, load_map, save_map

log = logging.getLogger("lockit")

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4

TRACE_FIELDS = ["iter", "est_x", "est_y", "est_theta", "effective_sample_size",
                "top1_node_id", "top1_desc_dist"]


# ---------------------------------------------------------------------------
# session I/O

def write_session(directory, poses, clouds, odometry=None) -> None:
    directory = Path(directory)
    (directory / "clouds").mkdir(parents=True, exist_ok=True)
    with open(directory / "poses.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["x", "y", "theta"])
        for p in poses:
            writer.writerow([repr(p.x), repr(p.y), repr(p.theta)])
    if odometry is not None:
        with open(directory / "odometry.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["dx", "dy", "dtheta"])
            for u in odometry:
                writer.writerow([repr(u.dx), repr(u.dy), repr(u.dtheta)])
    for i, cloud in enumerate(clouds):
        write_lpcd(directory / "clouds" / f"{i:06d}.lpcd", cloud)


def read_session(directory):
    directory = Path(directory)
    poses_path = directory / "poses.csv"
    if not poses_path.exists():
        raise FileNotFoundError(f"missing pose file: {poses_path}")
    poses = []
    with open(poses_path, newline="") as f:
        for row in csv.DictReader(f):
            poses.append(Pose2(float(row["x"]), float(row["y"]), float(row["theta"])))
    clouds = [read_lpcd(directory / "clouds" / f"{i:06d}.lpcd") for i in range(len(poses))]
    odom_path = directory / "odometry.csv"
    odometry = None
    if odom_path.exists():
        odometry = []
        with open(odom_path, newline="") as f:
            for row in csv.DictReader(f):
                odometry.append(OdometryDelta(float(row["dx"]), float(row["dy"]),
                                              float(row["dtheta"])))
    return poses, clouds, odometry


def _make_backend(spec: str):
    if spec == "synthetic":
        return SyntheticBackend()
    if spec.startswith("file:"):
        return FileBackend(spec[5:])
    raise ValueError(f"unknown backend {spec!r} (use 'synthetic' or 'file:<dir>')")


def _load_config(path):
    if path is None:
        return {}
    with open(path) as f:
        return json.load(f)


def _mcl_config(doc: dict, seed=None) -> mcl.MclConfig:
    cfg = mcl.MclConfig(**doc.get("mcl", {}))
    if seed is not None:
        cfg.seed = seed
    return cfg


def _preprocess_config(doc: dict) -> PreprocessConfig:
    return PreprocessConfig(**doc.get("preprocess", {}))


# ---------------------------------------------------------------------------
# subcommands

def cmd_build_map(args) -> int:
    doc = _load_config(args.config)
    backend = _make_backend(args.backend)
    pre_cfg = _preprocess_config(doc)
    trajectory = []
    for session_dir in args.trajectory:
        poses, clouds, _ = read_session(session_dir)
        trajectory.extend(zip(poses, clouds))
    topo = build_map(trajectory, args.spacing, backend, pre_cfg)
    save_map(topo, args.out)
    export_nodes_csv(topo, Path(args.out) / "nodes.csv")
    print(f"map written to {args.out}: {len(topo)} nodes at {args.spacing} m spacing")
    return 0


def cmd_localize(args) -> int:
    doc = _load_config(args.config)
    topo = load_map(args.map)
    backend = _make_backend(args.backend)
    cfg = _mcl_config(doc, seed=args.seed)
    pre_cfg = _preprocess_config(doc)
    fine_cfg = doc.get("fine", {})
    truth, clouds, odometry = read_session(args.queries)
    if odometry is None:
        odometry = simworld.simulate_odometry(truth, (0.0, 0.0), 0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    cache = MapRegistrationCache(topo, pre_cfg, backend)
    pset = mcl.init_particles(topo, cfg)
    trace_rows = []
    reg_reports = []
    coarse_records = []
    fine_records = []
    snapshots = {}
    snapshot_iters = {0, 1, 10, 20}
    prev_coarse = None
    accumulated_d = 0.0
    accumulated_dtheta = 0.0
    iteration = 0
    snapshots[0] = pset.xy.copy()
    for i in range(1, len(truth)):
        u = odometry[i - 1]
        accumulated_d += u.distance
        accumulated_dtheta += u.dtheta
        if accumulated_d < cfg.step_distance_m:
            continue
        step_u = OdometryDelta(accumulated_d, 0.0, accumulated_dtheta)
        accumulated_d = 0.0
        accumulated_dtheta = 0.0
        iteration += 1
        desc_cloud = preprocess_for_descriptor(clouds[i], pre_cfg)
        d_query = backend.global_descriptor(desc_cloud, scan_id=f"{i:06d}")
        pset = mcl.predict(pset, step_u, topo, cfg)
        pset = mcl.update_weights(pset, d_query, topo, cfg)
        ess = pset.effective_sample_size
        top1, top1_dist = topo.top_b_descriptor_matches(d_query, 1)[0]
        pset = mcl.resample(pset, cfg.resampling)
        coarse = mcl.estimate(pset)
        if iteration in snapshot_iters:
            snapshots[iteration] = pset.xy.copy()
        trace_rows.append([iteration, coarse.x, coarse.y, coarse.theta, ess,
                           top1.id, top1_dist])
        pos_err, yaw_err = evaluation.pose_errors(coarse, truth[i])
        coarse_records.append(evaluation.ErrorRecord(iteration, pos_err, yaw_err))
        if args.fine != "none":
            t0 = time.perf_counter()
            if args.fine == "icp":
                try:
                    fine = fine_localize_icp(clouds[i], topo, coarse,
                                             prev_coarse or coarse, cache)
                except (DegenerateGeometry, EmptyCorrespondences) as exc:
                    # unregistrable geometry for this query; keep the coarse pose
                    log.warning("iteration %d: ICP failed (%s), using coarse pose",
                                iteration, exc)
                    node = topo.nearest_node(coarse.x, coarse.y)
                    fine = FineResult(None, coarse, None, node.id, fell_back=True)
            else:
                fine = fine_localize_dlf(clouds[i], topo, coarse, backend, cache,
                                         scan_id=f"{i:06d}", seed=cfg.seed + iteration,
                                         polish=fine_cfg.get("polish", True))
            wall = time.perf_counter() - t0
            pos_err, yaw_err = evaluation.pose_errors(fine.pose, truth[i])
            fine_records.append(evaluation.ErrorRecord(iteration, pos_err, yaw_err))
            reg_reports.append({
                "iter": iteration,
                "method": args.fine,
                "node_id": fine.node_id,
                "seed_pose": [coarse.x, coarse.y, coarse.theta],
                "refined_pose": [fine.pose.x, fine.pose.y, fine.pose.theta],
                "cost": None if fine.report is None else fine.report.final_cost,
                "inliers": None if fine.report is None else fine.report.inlier_count,
                "iterations": None if fine.report is None else fine.report.iterations,
                "fell_back": fine.fell_back,
                "wall_time_s": wall,
            })
        prev_coarse = coarse

    with open(out / "trace.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(TRACE_FIELDS)
        for row in trace_rows:
            writer.writerow([row[0]] + [repr(v) for v in row[1:5]] + row[5:])
    np.savez(out / "particles.npz", **{f"iter_{k}": v for k, v in snapshots.items()})
    if reg_reports:
        with open(out / "registration.jsonl", "w") as f:
            for rec in reg_reports:
                f.write(json.dumps(rec) + "\n")
    evaluation.write_records_csv(coarse_records, out / "errors_coarse.csv")

    def _post_burn_in(records):
        kept = [r for r in records if r.index > cfg.burn_in_iters]
        if not kept:
            log.warning("run shorter than burn-in (%d iterations); "
                        "summarizing all iterations", cfg.burn_in_iters)
            kept = records
        return kept

    summary = {"coarse": evaluation.aggregate(_post_burn_in(coarse_records))}
    if fine_records:
        evaluation.write_records_csv(fine_records, out / "errors_fine.csv")
        summary["fine"] = evaluation.aggregate(_post_burn_in(fine_records))
    with open(out / "summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"run complete: {iteration} iterations, outputs in {out}")
    for name, agg in summary.items():
        print(f"  {name}: median {agg['pos_median_m']:.3f} m, "
              f"mean {agg['pos_mean_m']:.3f} m (post burn-in)")
    return 0


def cmd_evaluate(args) -> int:
    regions = evaluation.load_regions(args.regions) if args.regions else None
    named = {}
    for run in args.runs:
        run = Path(run)
        for kind in ("coarse", "fine"):
            path = run / f"errors_{kind}.csv"
            if not path.exists():
                continue
            records = evaluation.read_records_csv(path)
            if not records:
                continue
            if regions:
                # re-tag from the trace positions when available
                trace = run / "trace.csv"
                if trace.exists():
                    xy = []
                    with open(trace, newline="") as f:
                        by_iter = {int(r["iter"]): (float(r["est_x"]), float(r["est_y"]))
                                   for r in csv.DictReader(f)}
                    xy = [by_iter.get(r.index, (math.nan, math.nan)) for r in records]
                    tags = evaluation.tag_positions(np.array(xy), regions)
                    for rec, tag in zip(records, tags):
                        rec.tag = tag
            aggs = evaluation.aggregate_by_tag(records)
            for tag, agg in aggs.items():
                label = f"{run.name}/{kind}" + ("" if tag == "overall" else f"/{tag}")
                named[label] = agg
    if not named:
        print("no error records found in the given runs", file=sys.stderr)
        return EXIT_DATA
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    evaluation.write_table_csv(named, out / "table.csv")
    text = evaluation.format_table(named)
    (out / "table.txt").write_text(text)
    print(text, end="")
    return 0


def cmd_plot(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    trace_path = Path(args.trace)
    rows = []
    with open(trace_path, newline="") as f:
        for row in csv.DictReader(f):
            rows.append(row)
    if not rows:
        print(f"empty trace: {trace_path}", file=sys.stderr)
        return EXIT_DATA
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    xs = [float(r["est_x"]) for r in rows]
    ys = [float(r["est_y"]) for r in rows]
    ess = [float(r["effective_sample_size"]) for r in rows]

    fig, ax = plt.subplots(figsize=(6, 6))
    ax.plot(xs, ys, "r.-", label="estimate", markersize=3)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.legend()
    fig.savefig(out / "trajectory.png", dpi=120, metadata={"Software": None})
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 3))
    ax.plot([int(r["iter"]) for r in rows], ess)
    ax.set_xlabel("iteration")
    ax.set_ylabel("effective sample size")
    fig.savefig(out / "ess.png", dpi=120, metadata={"Software": None})
    plt.close(fig)

    particles_path = trace_path.parent / "particles.npz"
    if particles_path.exists():
        data = np.load(particles_path)
        for key in sorted(data.files):
            xy = data[key]
            fig, ax = plt.subplots(figsize=(6, 6))
            ax.plot(xy[:, 0], xy[:, 1], "r.", markersize=3)
            ax.set_aspect("equal")
            ax.set_title(key.replace("_", " "))
            fig.savefig(out / f"particles_{key}.png", dpi=120,
                        metadata={"Software": None})
            plt.close(fig)
    print(f"plots written to {out}")
    return 0


def cmd_simulate(args) -> int:
    extent = (0.0, 0.0, args.size, args.size)
    world = simworld.generate_world(args.seed, args.n_obstacles, extent)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    world.save(out / "world.json")
    m = args.size
    loop = [(8, 8), (m - 8, 8), (m - 8, m - 8), (8, m - 8), (8, 8)]
    map_truth = simworld.waypoint_path(loop, step_m=args.map_spacing)
    offset = [(9.0, 9.5), (m - 9, 9.5), (m - 9, m - 9), (9.0, m - 9), (9.0, 9.5)]
    query_truth = simworld.waypoint_path(offset, step_m=1.0)[:args.query_steps]
    scan_kw = dict(beam_count=(args.rings, args.azimuths),
                   max_range_m=args.max_range, noise_sigma_m=args.range_noise)
    map_clouds = [simworld.simulate_scan(world, p, seed=args.seed + i, **scan_kw)
                  for i, p in enumerate(map_truth)]
    write_session(out / "map_session", map_truth, map_clouds)
    query_clouds = [simworld.simulate_scan(world, p, seed=args.seed + 50000 + i, **scan_kw)
                    for i, p in enumerate(query_truth)]
    odometry = simworld.simulate_odometry(query_truth, (args.odom_noise,
                                                        math.radians(1.0)),
                                          seed=args.seed + 99)
    write_session(out / "query_session", query_truth, query_clouds, odometry)
    print(f"simulated benchmark in {out}: {len(map_truth)} map scans, "
          f"{len(query_truth)} query scans")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lockit",
                                     description="coarse-to-fine LiDAR localization toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-map", help="build a topological map from sessions")
    p.add_argument("--trajectory", nargs="+", required=True,
                   help="session directories, concatenated in order")
    p.add_argument("--spacing", type=float, default=1.0)
    p.add_argument("--backend", default="synthetic")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_map)

    p = sub.add_parser("localize", help="run coarse-to-fine localization")
    p.add_argument("--map", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--fine", choices=["dlf", "icp", "none"], default="dlf")
    p.add_argument("--backend", default="synthetic")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("evaluate", help="aggregate run outputs into error tables")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--regions", help="JSON polygons for indoor/outdoor tagging")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot", help="emit static figures from a filter trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("simulate", help="generate a synthetic benchmark dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=float, default=60.0)
    p.add_argument("--n-obstacles", type=int, default=40)
    p.add_argument("--map-spacing", type=float, default=1.0)
    p.add_argument("--query-steps", type=int, default=60)
    p.add_argument("--rings", type=int, default=24)
    p.add_argument("--azimuths", type=int, default=240)
    p.add_argument("--max-range", type=float, default=30.0)
    p.add_argument("--range-noise", type=float, default=0.01)
    p.add_argument("--odom-noise", type=float, default=0.05)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("LOCKIT_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except LockitError as exc:
        print(f"runtime error: {exc.__class__.__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
