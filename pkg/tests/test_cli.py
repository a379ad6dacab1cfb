import json

import numpy as np
import pytest

from tactile_servo.cli import main
from tactile_servo.gel_sim import save_scene
from tactile_servo.harness import preset_scene
from tactile_servo.sensor_core import (SensorCalibration, load_image,
                                       save_goal_spec)
from tactile_servo.servo_loop import build_goal_spec
from tactile_servo.harness import preset_keypoints

CAL = SensorCalibration()


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    scene, kp_mm = preset_scene("block", noise_sigma=0.0)
    save_scene(scene, root / "scene.json")
    kp = preset_keypoints(kp_mm, CAL)
    (root / "keypoints.json").write_text(
        json.dumps({"keypoints": kp.points.tolist()}))
    goal = build_goal_spec(scene, CAL, kp, gripper_width_mm=30.0)
    save_goal_spec(goal, root / "goal_spec.json")
    return root


def test_render_writes_image(workdir):
    out = workdir / "goal.png"
    rc = main(["render", "--scene", str(workdir / "scene.json"),
               "--out", str(out)])
    assert rc == 0
    img = load_image(out, CAL)
    assert (img.width, img.height) == (CAL.working_width_px,
                                       CAL.working_height_px)


def test_render_shifted(workdir):
    rc = main(["render", "--scene", str(workdir / "scene.json"),
               "--offset", "1.5", "-1.0", "0.1",
               "--out", str(workdir / "cur.png")])
    assert rc == 0
    a = np.asarray(load_image(workdir / "goal.png", CAL).pixels)
    b = np.asarray(load_image(workdir / "cur.png", CAL).pixels)
    assert not np.array_equal(a, b)


def test_extract_match_estimate_pipeline(workdir, capsys):
    rc = main(["extract", "--image", str(workdir / "goal.png"),
               "--out", str(workdir / "goal.tdsc")])
    assert rc == 0
    rc = main(["match", "--goal", str(workdir / "goal.tdsc"),
               "--current", str(workdir / "cur.png"),
               "--keypoints", str(workdir / "keypoints.json"),
               "--out", str(workdir / "matches.json")])
    assert rc == 0
    rc = main(["estimate", "--matches", str(workdir / "matches.json"),
               "--out", str(workdir / "estimate.json")])
    assert rc == 0
    est = json.loads((workdir / "estimate.json").read_text())
    assert est["dx_mm"] == pytest.approx(1.5, abs=0.3)
    assert est["dz_mm"] == pytest.approx(-1.0, abs=0.3)


def test_match_to_stdout(workdir, capsys):
    rc = main(["match", "--goal", str(workdir / "goal.png"),
               "--current", str(workdir / "goal.png"),
               "--keypoints", str(workdir / "keypoints.json")])
    assert rc == 0
    doc = json.loads(capsys.readouterr().out)
    assert all(m["confident"] for m in doc["matches"])


def test_servo_success(workdir):
    rc = main(["servo", "--goal-spec", str(workdir / "goal_spec.json"),
               "--scene", str(workdir / "scene.json"),
               "--offset", "1.0", "-0.5", "0.05",
               "--out", str(workdir / "servo.json")])
    assert rc == 0
    doc = json.loads((workdir / "servo.json").read_text())
    assert doc["outcome"] == "success"


def test_servo_no_contact_exit_code(workdir, tmp_path):
    rc = main(["servo", "--goal-spec", str(workdir / "goal_spec.json"),
               "--scene", str(workdir / "scene.json"),
               "--offset", "100.0", "0", "0",
               "--out", str(tmp_path / "servo.json")])
    assert rc == 2


def test_servo_dump_images(workdir, tmp_path):
    rc = main(["servo", "--goal-spec", str(workdir / "goal_spec.json"),
               "--scene", str(workdir / "scene.json"),
               "--offset", "0.5", "0.5", "0",
               "--dump-images", str(tmp_path / "frames"),
               "--out", str(tmp_path / "servo.json")])
    assert rc == 0
    assert (tmp_path / "frames" / "iteration_00.png").exists()


def test_experiment_and_summarize(tmp_path, capsys):
    rc = main(["experiment", "--preset", "gear", "--trials", "3",
               "--seed", "4", "--out", str(tmp_path / "exp")])
    assert rc == 0
    assert "d_error" in capsys.readouterr().out
    rc = main(["summarize", str(tmp_path / "exp" / "perturbation_summary.json")])
    assert rc == 0
    assert "perturbation" in capsys.readouterr().out


def test_scenario_command(tmp_path, capsys):
    rc = main(["scenario", "--name", "block_alignment", "--trials", "2",
               "--seed", "1", "--out", str(tmp_path)])
    assert rc == 0
    assert "2/2" in capsys.readouterr().out
    assert (tmp_path / "scenario_block_alignment.json").exists()


def test_missing_scene_is_config_error(tmp_path, capsys):
    rc = main(["render", "--scene", str(tmp_path / "absent.json"),
               "--out", str(tmp_path / "x.png")])
    assert rc == 1
    assert "config error" in capsys.readouterr().err


def test_corrupt_descriptor_file_is_pipeline_error(workdir, tmp_path, capsys):
    bad = tmp_path / "bad.tdsc"
    bad.write_bytes(b"NOPE" + bytes(64))
    rc = main(["match", "--goal", str(bad),
               "--current", str(workdir / "goal.png"),
               "--keypoints", str(workdir / "keypoints.json")])
    assert rc == 2
    assert "pipeline error" in capsys.readouterr().err


def test_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 1


def test_unknown_preset_is_config_error(tmp_path, capsys):
    rc = main(["experiment", "--preset", "pyramid", "--trials", "1",
               "--out", str(tmp_path)])
    assert rc == 1
