import numpy as np
import pytest
import yaml

from deflectogaze.cli import EXIT_CONFIG, EXIT_OK, EXIT_STAGE, main, parse_pattern
from deflectogaze.config import ConfigError, save_scene, scene_to_dict
from deflectogaze.io import read_csv, read_ground_truth, read_pgm, read_ply
from deflectogaze.simulator.patterns import Checkerboard, CrossSinusoid, Sinusoid
from deflectogaze.simulator.scene import default_scene


def test_pattern_shorthands(tmp_path):
    assert parse_pattern("cross:80") == CrossSinusoid(80.0, 80.0)
    assert parse_pattern("horizontal:50") == Sinusoid("horizontal", 50.0)
    assert parse_pattern("checker:32") == Checkerboard(32.0)
    (tmp_path / "p.yaml").write_text(yaml.safe_dump({"kind": "CrossSinusoid", "period_x": 60.0, "period_y": 70.0}))
    assert parse_pattern(str(tmp_path / "p.yaml")) == CrossSinusoid(60.0, 70.0)
    for bad in ("spiral", "cross:abc"):
        with pytest.raises(ConfigError):
            parse_pattern(bad)


def test_config_errors_exit_3(tmp_path, capsys):
    assert main(["experiment", "ball", "-c", str(tmp_path / "missing.yaml"), "-o", str(tmp_path)]) == EXIT_CONFIG
    (tmp_path / "c.yaml").write_text("experiment: grid\n")
    assert main(["experiment", "ball", "-c", str(tmp_path / "c.yaml"), "-o", str(tmp_path)]) == EXIT_CONFIG
    (tmp_path / "s.yaml").write_text("surface: {type: cube}\n")
    assert main(["simulate", str(tmp_path / "s.yaml"), "cross:80", "-o", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_simulate_then_reconstruct_ball(tmp_path):
    save_scene(tmp_path / "scene.yaml", default_scene("ball"))
    out = tmp_path / "cap"
    assert main(["simulate", str(tmp_path / "scene.yaml"), "cross:80", "-o", str(out), "--png"]) == EXIT_OK
    img = read_pgm(out / "cam0.pgm")
    gt = read_ground_truth(out / "cam0.dgt")
    assert img.shape == gt.valid.shape == (960, 1280)
    assert (out / "cam1.png").exists() and (out / "pattern.yaml").exists()
    assert main(["reconstruct", str(out)]) == EXIT_OK
    row = read_csv(out / "reconstruction.csv")[0]
    assert row["mode"] == "sphere"
    assert abs(float(row["radius_mm"]) - 12.0) < 0.01
    pts, nrm = read_ply(out / "surface.ply")
    assert len(pts) == int(row["points"]) and np.allclose(np.linalg.norm(nrm, axis=1), 1, atol=1e-6)
    for f in ("cam0.dpm", "cam1.dcm", "timings.csv"):
        assert (out / f).exists()


def test_pipeline_failure_exits_2(tmp_path, capsys):
    d = scene_to_dict(default_scene("ball"))
    d["surface"]["center"] = [300.0, 0.0, 0.0]  # out of both views
    (tmp_path / "scene.yaml").write_text(yaml.safe_dump(d))
    out = tmp_path / "cap"
    assert main(["simulate", str(tmp_path / "scene.yaml"), "cross:80", "-o", str(out)]) == EXIT_OK
    assert main(["reconstruct", str(out)]) == EXIT_STAGE
    assert "pipeline stage failed: decode" in capsys.readouterr().err


def test_reconstruct_rejects_non_crossed_pattern(tmp_path):
    save_scene(tmp_path / "scene.yaml", default_scene("ball"))
    out = tmp_path / "cap"
    assert main(["simulate", str(tmp_path / "scene.yaml"), "checker:64", "-o", str(out)]) == EXIT_OK
    assert main(["reconstruct", str(out)]) == EXIT_CONFIG
