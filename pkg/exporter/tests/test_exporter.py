import json
import hashlib
import struct

import numpy as np
import pytest

import ldsc_exporter
from ldsc_exporter import (GLOBAL_DIM, KIND_GLOBAL, KIND_LOCAL, LOCAL_DIM,
                           DescriptorModel, ModelLoadError, ScanParseError,
                           cli, read_ldsc, read_lpcd, write_default_weights)

LPCD_HEADER = struct.Struct("<4sHBQ")


def write_lpcd(path, points):
    points = np.asarray(points, dtype="<f4")
    path.write_bytes(LPCD_HEADER.pack(b"LPCD", 1, 0, len(points))
                     + points.tobytes())


@pytest.fixture(scope="module")
def weights(tmp_path_factory):
    path = tmp_path_factory.mktemp("weights") / "weights.npz"
    write_default_weights(path, seed=0)
    return path


@pytest.fixture(scope="module")
def scan_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("scans")
    rng = np.random.default_rng(7)
    for i in range(4):
        write_lpcd(d / f"{i:06d}.lpcd", rng.uniform(-10, 10, size=(300, 3)))
    return d


class TestFormats:
    def test_lpcd_round_trip(self, tmp_path):
        pts = np.arange(12, dtype=np.float32).reshape(4, 3)
        write_lpcd(tmp_path / "a.lpcd", pts)
        back = read_lpcd(tmp_path / "a.lpcd")
        np.testing.assert_array_equal(back, pts.astype(np.float64))

    def test_lpcd_bad_magic(self, tmp_path):
        (tmp_path / "bad.lpcd").write_bytes(b"NOPE" + b"\x00" * 20)
        with pytest.raises(ScanParseError, match="magic"):
            read_lpcd(tmp_path / "bad.lpcd")

    def test_lpcd_truncated(self, tmp_path):
        pts = np.zeros((5, 3), dtype=np.float32)
        write_lpcd(tmp_path / "t.lpcd", pts)
        data = (tmp_path / "t.lpcd").read_bytes()
        (tmp_path / "t.lpcd").write_bytes(data[:-8])
        with pytest.raises(ScanParseError, match="truncated"):
            read_lpcd(tmp_path / "t.lpcd")


class TestModel:
    def test_missing_weights(self, tmp_path):
        with pytest.raises(ModelLoadError, match="not found"):
            DescriptorModel(tmp_path / "nope.npz")

    def test_unknown_layer(self, weights):
        with pytest.raises(ModelLoadError, match="layer"):
            DescriptorModel(weights, layer="decoder-9")

    def test_dims_and_determinism(self, weights):
        model = DescriptorModel(weights)
        pts = np.random.default_rng(3).uniform(-5, 5, size=(200, 3))
        g1, g2 = model.global_descriptor(pts), model.global_descriptor(pts)
        np.testing.assert_array_equal(g1, g2)
        assert g1.shape == (GLOBAL_DIM,)
        assert abs(np.linalg.norm(g1) - 1.0) < 1e-9
        l1 = model.local_features(pts)
        assert l1.shape == (200, LOCAL_DIM)
        np.testing.assert_array_equal(l1, model.local_features(pts))

    def test_layers_differ(self, weights):
        pts = np.random.default_rng(4).uniform(-5, 5, size=(100, 3))
        a = DescriptorModel(weights, layer="transpose-conv-1").local_features(pts)
        b = DescriptorModel(weights, layer="transpose-conv-2").local_features(pts)
        assert np.linalg.norm(a - b) > 1e-3


class TestExportCli:
    def run_export(self, scan_dir, weights, out):
        return cli.main(["export", "--scans", str(scan_dir),
                         "--weights", str(weights),
                         "--layer", "transpose-conv-2", "--out", str(out)])

    def test_export_outputs(self, scan_dir, weights, tmp_path):
        out = tmp_path / "out"
        assert self.run_export(scan_dir, weights, out) == 0
        for i in range(4):
            kind, vecs, pts, layer = read_ldsc(out / f"{i:06d}.g.ldsc")
            assert kind == KIND_GLOBAL and vecs.shape == (1, GLOBAL_DIM)
            kind, vecs, pts, layer = read_ldsc(out / f"{i:06d}.l.ldsc")
            assert kind == KIND_LOCAL and layer == "transpose-conv-2"
            assert vecs.shape == (300, LOCAL_DIM) and pts.shape == (300, 3)
            np.testing.assert_allclose(
                pts, read_lpcd(scan_dir / f"{i:06d}.lpcd"), atol=1e-6)

    def test_reexport_byte_identical(self, scan_dir, weights, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert self.run_export(scan_dir, weights, out_a) == 0
        assert self.run_export(scan_dir, weights, out_b) == 0
        for f in sorted(out_a.iterdir()):
            assert f.read_bytes() == (out_b / f.name).read_bytes(), f.name

    def test_manifest_checksums(self, scan_dir, weights, tmp_path):
        out = tmp_path / "out"
        assert self.run_export(scan_dir, weights, out) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["layer"] == "transpose-conv-2"
        assert len(manifest["scans"]) == 4 and manifest["skipped"] == []
        for entry in manifest["scans"]:
            for kind in ("global", "local"):
                blob = (out / entry[kind]["file"]).read_bytes()
                assert hashlib.sha256(blob).hexdigest() == entry[kind]["sha256"]

    def test_skips_corrupt_scan(self, scan_dir, weights, tmp_path, caplog):
        mixed = tmp_path / "mixed"
        mixed.mkdir()
        for f in scan_dir.iterdir():
            (mixed / f.name).write_bytes(f.read_bytes())
        (mixed / "000099.lpcd").write_bytes(b"garbage")
        out = tmp_path / "out"
        rc = self.run_export(mixed, weights, out)
        assert rc == 1   # partial success
        assert not (out / "000099.g.ldsc").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["skipped"] == ["000099"]
        assert len(manifest["scans"]) == 4

    def test_missing_scan_dir(self, weights, tmp_path):
        assert self.run_export(tmp_path / "nope", weights, tmp_path / "o") == 3

    def test_bad_weights(self, scan_dir, tmp_path):
        bad = tmp_path / "bad.npz"
        np.savez(bad, junk=np.zeros(3))
        assert self.run_export(scan_dir, bad, tmp_path / "o") == 2

    def test_empty_dir(self, weights, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        assert self.run_export(empty, weights, tmp_path / "o") == 3

    def test_bad_args(self):
        assert cli.main(["frobnicate"]) == 2
