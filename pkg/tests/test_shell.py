import copy
import json
import warnings

import numpy as np
import pytest

from softsim.cli import main
from softsim.config import ConfigError, build_world, load_scene, parse_config
from softsim.demo import Trajectory, read_trajectory, record_rollout, write_trajectory
from softsim.golden import panda_press_config, reach_press_targets
from softsim.io import export_particles, read_ply

BASE = {
    "name": "cube",
    "gravity": [0, 0, 0],
    "grid": {"length": 0.01, "dims": [16, 16, 16]},
    "materials": {"clay": {"preset": "soft-clay"}},
    "particles": [{"box": {"lo": [0.05, 0.05, 0.05], "hi": [0.08, 0.08, 0.08]}, "material": "clay"}],
}


def scene(tmp_path, name="scene.json", **over):
    cfg = copy.deepcopy(BASE)
    cfg.update(over)
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def empty_traj(tmp_path, steps=2):
    p = tmp_path / "empty.mstraj"
    write_trajectory(Trajectory("", 0.05, np.zeros((steps, 0))), p)
    return p


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------
def test_error_names_field_path():
    cfg = copy.deepcopy(BASE)
    cfg["grid"]["length"] = -0.01
    with pytest.raises(ConfigError, match=r"grid\.length"):
        parse_config(cfg)
    cfg = copy.deepcopy(BASE)
    cfg["grid"]["spacing"] = 0.01
    with pytest.raises(ConfigError, match=r"grid\.spacing"):
        parse_config(cfg)
    cfg = copy.deepcopy(BASE)
    cfg["stepping"] = {"n_rigid": 10}
    with pytest.raises(ConfigError, match="control_hz"):
        parse_config(cfg)
    cfg = copy.deepcopy(BASE)
    cfg["particles"][0]["material"] = "sand"
    with pytest.raises(ConfigError, match="sand"):
        parse_config(cfg)


def test_lattice_particle_count():
    w = build_world(parse_config(BASE))
    s = 6.2e-8 ** (1 / 3)
    assert w.soft.particles.n == int(np.rint(0.03 / s)) ** 3
    assert np.allclose(w.soft.particles.vol0, 6.2e-8)


def test_out_of_range_values_warn():
    cfg = copy.deepcopy(BASE)
    cfg["grid"]["length"] = 0.02
    cfg["materials"]["clay"] = {"preset": "soft-clay", "youngs_modulus": 1e6}
    with pytest.warns(UserWarning) as rec:
        build_world(parse_config(cfg))
    text = " ".join(str(r.message) for r in rec)
    assert "grid.length" in text and "Young's modulus" in text
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        build_world(parse_config(BASE))


def test_golden_scene_reference():
    w = load_scene("golden:press-plane")
    assert w.meta["name"] == "press-plane"
    with pytest.raises(KeyError):
        load_scene("golden:nope")


# ---------------------------------------------------------------------------
# PLY export
# ---------------------------------------------------------------------------
def test_ply_round_trip(tmp_path):
    w = build_world(parse_config(BASE))
    p = tmp_path / "f.ply"
    n = export_particles(w.soft, p)
    x, ids = read_ply(p)
    assert n == w.soft.particles.n == len(x)
    assert np.array_equal(x, w.soft.particles.x.astype(np.float32)) and not ids.any()
    w.soft.particles.active[:5] = False
    assert export_particles(w.soft, p) == n - 5
    assert export_particles(w.soft, p, active_only=False) == n


def test_ply_empty(tmp_path):
    cfg = copy.deepcopy(BASE)
    cfg["particles"] = []
    p = tmp_path / "e.ply"
    assert export_particles(build_world(parse_config(cfg)).soft, p) == 0
    x, ids = read_ply(p)
    assert x.shape == (0, 3) and ids.shape == (0,)
    assert "element vertex 0" in p.read_text()
    (tmp_path / "bad.ply").write_text("obj\n")
    with pytest.raises(ValueError):
        read_ply(tmp_path / "bad.ply")


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------
def test_cli_run_records_and_plots(tmp_path, capsys):
    rec = tmp_path / "run.jsonl"
    assert main(["run", "--scene", str(scene(tmp_path)), "--traj", str(empty_traj(tmp_path)),
                 "--record", str(rec)]) == 0
    rows = [json.loads(ln) for ln in rec.read_text().splitlines()]
    assert [r["step"] for r in rows] == [0, 1] and rows[-1]["kinetic_energy"] < 1e-20
    assert (tmp_path / "run.png").stat().st_size > 0
    assert "steps=2" in capsys.readouterr().out


def test_cli_config_errors_exit_2(tmp_path, capsys):
    assert main(["run", "--scene", str(tmp_path / "missing.json"), "--traj", str(empty_traj(tmp_path))]) == 2
    bad = copy.deepcopy(BASE)
    bad["grid"]["length"] = 0
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(bad))
    assert main(["run", "--scene", str(p), "--traj", str(empty_traj(tmp_path))]) == 2
    assert "grid.length" in capsys.readouterr().err
    (tmp_path / "junk.mstraj").write_bytes(b"garbage")
    assert main(["run", "--scene", str(scene(tmp_path)), "--traj", str(tmp_path / "junk.mstraj")]) == 2
    assert main(["export", "--scene", str(scene(tmp_path)), "--traj", str(empty_traj(tmp_path)),
                 "--every", "0", "--out-dir", str(tmp_path)]) == 2


def test_cli_divergence_exit_3(tmp_path, capsys):
    cfg = copy.deepcopy(BASE)
    cfg["particles"][0]["velocity"] = [500.0, 0, 0]
    p = tmp_path / "fast.json"
    p.write_text(json.dumps(cfg))
    assert main(["run", "--scene", str(p), "--traj", str(empty_traj(tmp_path))]) == 3
    assert "diverged" in capsys.readouterr().err


def test_cli_replay_metric_failure_exit_4(tmp_path, capsys):
    task = {"kind": "fill", "region": {"lo": [0.1, 0.1, 0.1], "hi": [0.14, 0.14, 0.14]}}
    out = tmp_path / "out"
    assert main(["replay", "--scene", str(scene(tmp_path, task=task)), "--traj", str(empty_traj(tmp_path)),
                 "--out-dir", str(out)]) == 4
    assert "metric=fill value=0 success=False" in capsys.readouterr().out
    assert {f.name for f in out.iterdir()} >= {"replay.csv", "replay.png", "particles.png"}
    task["region"] = {"lo": [0.04, 0.04, 0.04], "hi": [0.09, 0.09, 0.09]}
    assert main(["replay", "--scene", str(scene(tmp_path, "ok.json", task=task)), "--traj",
                 str(empty_traj(tmp_path)), "--out-dir", str(out)]) == 0


def test_cli_export_frames(tmp_path):
    d = tmp_path / "frames"
    assert main(["export", "--scene", str(scene(tmp_path)), "--traj", str(empty_traj(tmp_path, 4)),
                 "--every", "2", "--out-dir", str(d)]) == 0
    assert sorted(f.name for f in d.iterdir()) == ["frame_00000.ply", "frame_00002.ply", "frame_00004.ply"]


def test_cli_convert(tmp_path, rng, capsys):
    cfg_path = tmp_path / "panda.json"
    cfg_path.write_text(json.dumps(panda_press_config()))
    acts = reach_press_targets(rng, "reach", steps=5)
    src = tmp_path / "src.mstraj"
    write_trajectory(record_rollout(load_scene(cfg_path), acts, str(cfg_path)), src)
    out = tmp_path / "out.mstraj"
    assert main(["convert", "--traj", str(src), "--to", "ee_delta_pose", "--scene", str(cfg_path),
                 "--out", str(out)]) == 0
    conv = read_trajectory(out)
    assert conv.controller_id == "arm:ee_delta_pose" and conv.steps == 5 and conv.scene == str(cfg_path)
    assert main(["convert", "--traj", str(src), "--to", "ee_delta_pose", "--scene", str(cfg_path),
                 "--out", str(out), "--tol", "1e-15"]) == 4
    assert main(["convert", "--traj", str(src), "--to", "warp_drive", "--scene", str(cfg_path),
                 "--out", str(out)]) == 2
    assert main(["convert", "--traj", str(src), "--to", "ee_delta_pos", "--scene", str(cfg_path),
                 "--out", str(out), "--open-loop"]) == 0


def test_cli_rejects_mismatched_controller(tmp_path, capsys):
    p = tmp_path / "t.mstraj"
    write_trajectory(Trajectory("arm:joint_vel", 0.05, np.zeros((1, 7))), p)
    assert main(["run", "--scene", str(scene(tmp_path)), "--traj", str(p)]) == 2
    assert "does not match" in capsys.readouterr().err
