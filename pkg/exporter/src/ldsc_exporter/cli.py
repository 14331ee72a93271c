"""Command line entry point for the descriptor exporter.

Usage:
    ldsc-exporter export --scans DIR --weights FILE --layer NAME --out DIR

Reads every ``*.lpcd`` scan in the input directory, runs the descriptor
model over it, and writes ``<scan_id>.g.ldsc`` / ``<scan_id>.l.ldsc`` plus
a ``manifest.json`` with sha256 checksums to the output directory.  Writes
are atomic (temp file + rename) and the output is byte-identical across
runs with the same inputs.

Exit codes: 0 success, 1 some scans skipped, 2 bad arguments or weights,
3 no usable input.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

from .errors import ModelLoadError, ScanParseError
from .formats import KIND_GLOBAL, KIND_LOCAL, ldsc_bytes, read_lpcd
from .model import GLOBAL_DIM, LOCAL_DIM, DescriptorModel

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2
EXIT_DATA = 3

log = logging.getLogger("ldsc_exporter")


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _export(args) -> int:
    scans_dir = Path(args.scans)
    out_dir = Path(args.out)
    if not scans_dir.is_dir():
        log.error("scan directory not found: %s", scans_dir)
        return EXIT_DATA
    try:
        model = DescriptorModel(args.weights, layer=args.layer)
    except ModelLoadError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG

    scan_paths = sorted(scans_dir.glob("*.lpcd"))
    if not scan_paths:
        log.error("no .lpcd scans in %s", scans_dir)
        return EXIT_DATA

    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    skipped = []
    for scan_path in scan_paths:
        scan_id = scan_path.stem
        try:
            points = read_lpcd(scan_path)
            g = model.global_descriptor(points).reshape(1, GLOBAL_DIM)
            l = model.local_features(points)
            assert l.shape[1] == LOCAL_DIM
        except (ScanParseError, ValueError) as exc:
            log.warning("skipping %s: %s", scan_path.name, exc)
            skipped.append(scan_id)
            continue
        g_bytes = ldsc_bytes(KIND_GLOBAL, g, None, "global")
        l_bytes = ldsc_bytes(KIND_LOCAL, l, points, args.layer)
        g_path = out_dir / f"{scan_id}.g.ldsc"
        l_path = out_dir / f"{scan_id}.l.ldsc"
        _atomic_write(g_path, g_bytes)
        _atomic_write(l_path, l_bytes)
        entries.append({
            "scan_id": scan_id,
            "points": int(len(points)),
            "global": {"file": g_path.name, "dim": GLOBAL_DIM,
                       "sha256": hashlib.sha256(g_bytes).hexdigest()},
            "local": {"file": l_path.name, "dim": LOCAL_DIM,
                      "sha256": hashlib.sha256(l_bytes).hexdigest()},
        })
        log.info("exported %s (%d points)", scan_id, len(points))

    if not entries:
        log.error("every scan failed to parse")
        return EXIT_DATA

    manifest = {
        "format": "ldsc",
        "version": 1,
        "layer": args.layer,
        "weights_sha256": hashlib.sha256(Path(args.weights).read_bytes()).hexdigest(),
        "scans": entries,
        "skipped": sorted(skipped),
    }
    _atomic_write(out_dir / "manifest.json",
                  (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
    return EXIT_PARTIAL if skipped else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ldsc-exporter",
                                     description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default=os.environ.get("LDSC_LOG", "WARNING"))
    sub = parser.add_subparsers(dest="command", required=True)
    exp = sub.add_parser("export", help="export descriptors for a scan directory")
    exp.add_argument("--scans", required=True, help="directory of .lpcd scans")
    exp.add_argument("--weights", required=True, help="model weights .npz file")
    exp.add_argument("--layer", default="transpose-conv-2",
                     help="local feature layer to export")
    exp.add_argument("--out", required=True, help="output directory")
    exp.set_defaults(func=_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=args.log_level.upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
