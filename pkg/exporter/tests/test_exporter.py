"""Exporter contract tests.

The consumer pipeline is exercised only through its public interfaces: the
TDSC file format and the tactile-servo command line.
"""

import json
import math
import struct
import subprocess
import sys

import numpy as np
import pytest

from descriptor_exporter.cli import main as exporter_main
from descriptor_exporter.export import ExportError, ExportJob, export

WIDTH, HEIGHT = 224, 298
STRIDE = 4
SHIFT_MM = 0.6  # 8 px at 0.075 mm/px
HEADER = struct.Struct("<4sHIIIHffII")

BLOCK = [[-3.0, -2.0], [3.0, -2.0], [3.0, 2.0], [-3.0, 2.0]]


def run_consumer(*args):
    return subprocess.run([sys.executable, "-m", "tactile_servo.cli", *args],
                          capture_output=True, text=True)


def snap(px):
    origin = STRIDE / 2.0
    return round((px - origin) / STRIDE) * STRIDE + origin


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("export")
    (root / "scene.json").write_text(json.dumps(
        {"shapes": [BLOCK], "noise_sigma": 0.0}))
    r = run_consumer("render", "--scene", str(root / "scene.json"),
                     "--out", str(root / "goal.png"))
    assert r.returncode == 0, r.stderr
    r = run_consumer("render", "--scene", str(root / "scene.json"),
                     "--offset", str(SHIFT_MM), "0", "0",
                     "--out", str(root / "shifted.png"))
    assert r.returncode == 0, r.stderr

    # block corners in working pixels, snapped to descriptor cell centers
    mm_per_px = 0.075
    cu, cv = (WIDTH - 1) / 2.0, (HEIGHT - 1) / 2.0
    corners = [[snap(cu + x / mm_per_px), snap(cv + z / mm_per_px)]
               for x, z in BLOCK]
    (root / "keypoints.json").write_text(json.dumps({"keypoints": corners}))

    rc = exporter_main(["--images", str(root / "*.png"),
                        "--out", str(root / "tdsc"),
                        "--model", "randconv", "--stride", str(STRIDE),
                        "--resize", f"{WIDTH}x{HEIGHT}"])
    assert rc == 0
    return root


def read_tdsc(path):
    raw = path.read_bytes()
    magic, version, gh, gw, dim, stride, ou, ov, sw, sh = HEADER.unpack_from(raw)
    data = np.frombuffer(raw, dtype="<f4", count=gh * gw * dim,
                         offset=HEADER.size).reshape(gh, gw, dim)
    return (magic, version, gh, gw, dim, stride, ou, ov, sw, sh), data


class TestFileContract:
    def test_header_matches_grid_convention(self, workdir):
        header, data = read_tdsc(workdir / "tdsc" / "goal.tdsc")
        magic, version, gh, gw, dim, stride, ou, ov, sw, sh = header
        assert magic == b"TDSC" and version == 1
        assert stride == STRIDE and (ou, ov) == (2.0, 2.0)
        assert (sw, sh) == (WIDTH, HEIGHT)
        origin = STRIDE / 2.0
        assert gw == int((WIDTH - 1 - origin) // STRIDE) + 1
        assert gh == int((HEIGHT - 1 - origin) // STRIDE) + 1
        assert data.shape == (gh, gw, dim)

    def test_vectors_unit_norm(self, workdir):
        _, data = read_tdsc(workdir / "tdsc" / "goal.tdsc")
        norms = np.linalg.norm(data, axis=2)
        assert np.all(np.abs(norms - 1.0) <= 1e-3)

    def test_export_deterministic(self, workdir, tmp_path):
        rc = exporter_main(["--images", str(workdir / "goal.png"),
                            "--out", str(tmp_path),
                            "--model", "randconv", "--stride", str(STRIDE),
                            "--resize", f"{WIDTH}x{HEIGHT}"])
        assert rc == 0
        a = (workdir / "tdsc" / "goal.tdsc").read_bytes()
        b = (tmp_path / "goal.tdsc").read_bytes()
        assert a == b

    def test_consumer_loads_files(self, workdir, tmp_path):
        r = run_consumer("match",
                         "--goal", str(workdir / "tdsc" / "goal.tdsc"),
                         "--current", str(workdir / "tdsc" / "goal.tdsc"),
                         "--keypoints", str(workdir / "keypoints.json"),
                         "--out", str(tmp_path / "matches.json"))
        assert r.returncode == 0, r.stderr


class TestMatchingContract:
    def test_self_match_similarity(self, workdir, tmp_path):
        r = run_consumer("match",
                         "--goal", str(workdir / "tdsc" / "goal.tdsc"),
                         "--current", str(workdir / "tdsc" / "goal.tdsc"),
                         "--keypoints", str(workdir / "keypoints.json"),
                         "--out", str(tmp_path / "matches.json"))
        assert r.returncode == 0, r.stderr
        doc = json.loads((tmp_path / "matches.json").read_text())
        assert len(doc["matches"]) == 4
        for m in doc["matches"]:
            assert m["similarity"] >= 0.999
            assert m["found_point"] == pytest.approx(m["goal_point"], abs=1.0)

    def test_known_shift_recovered(self, workdir, tmp_path):
        r = run_consumer("match",
                         "--goal", str(workdir / "tdsc" / "goal.tdsc"),
                         "--current", str(workdir / "tdsc" / "shifted.tdsc"),
                         "--keypoints", str(workdir / "keypoints.json"),
                         "--out", str(tmp_path / "matches.json"))
        assert r.returncode == 0, r.stderr
        r = run_consumer("estimate", "--matches", str(tmp_path / "matches.json"),
                         "--out", str(tmp_path / "estimate.json"))
        assert r.returncode == 0, r.stderr
        est = json.loads((tmp_path / "estimate.json").read_text())
        assert est["dx_mm"] > 0.0  # correct sign
        assert abs(est["dx_mm"] - SHIFT_MM) <= 1.0
        assert abs(est["dz_mm"]) <= 1.0
        assert abs(math.degrees(est["dtheta_rad"])) <= 5.0


class TestJobValidation:
    def test_empty_job_rejected(self, tmp_path):
        with pytest.raises(ExportError):
            ExportJob(images=(), out_dir=str(tmp_path))

    def test_incompatible_stride_rejected(self, workdir, tmp_path):
        job = ExportJob(images=(str(workdir / "goal.png"),),
                        out_dir=str(tmp_path), model="dino_vits8", stride=3)
        with pytest.raises(ExportError):
            export(job)

    def test_unreadable_image_rejected(self, tmp_path):
        bad = tmp_path / "junk.png"
        bad.write_bytes(b"not an image")
        job = ExportJob(images=(str(bad),), out_dir=str(tmp_path),
                        model="randconv")
        with pytest.raises(ExportError):
            export(job)

    def test_cli_no_match_is_usage_error(self, tmp_path, capsys):
        rc = exporter_main(["--images", str(tmp_path / "none-*.png"),
                            "--out", str(tmp_path)])
        assert rc == 1

    def test_cli_unknown_model_is_export_error(self, workdir, tmp_path):
        rc = exporter_main(["--images", str(workdir / "goal.png"),
                            "--out", str(tmp_path), "--model", "resnet"])
        assert rc == 2
