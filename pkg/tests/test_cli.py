import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from retargetlab.cli import main
from retargetlab.kinematics import fixture_path, load_fixture
from retargetlab.lie import Pose
from retargetlab.sequences import RobotTrajectory, write_json
from retargetlab.synthetic import identity_mapping, motion_from_trajectory, saddle_sweep, smooth_trajectory

HUMANOID_BODIES = ["pelvis", "left_hand", "right_hand", "left_ankle", "right_ankle", "head"]
STAND_ROOT = Pose(np.eye(3), [0, 0, 0.95])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write(path, obj):
    write_json(path, obj)
    return str(path)


@pytest.fixture
def planar2_traj(tmp_path):
    model = load_fixture("planar2")
    traj = RobotTrajectory.from_arrays(30.0, model.joint_names, np.zeros((4, 2)))
    return write(tmp_path / "traj.json", traj.to_dict())


# --------------------------------------------------------------------------- fk


def test_fk_planar2(tmp_path, planar2_traj):
    out = tmp_path / "fk.json"
    assert main(["fk", "--model", "planar2", "--trajectory", planar2_traj, "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    ee = doc["body_names"].index("ee")
    for frame in doc["frames"]:
        assert np.allclose(frame["poses"][ee]["pos"], [2, 0, 0], atol=1e-15)
        assert np.allclose(frame["poses"][ee]["quat_wxyz"], [1, 0, 0, 0])


def test_fk_model_by_path(tmp_path, planar2_traj):
    out = tmp_path / "fk.json"
    assert main(["fk", "--model", str(fixture_path("planar2.json")), "--trajectory", planar2_traj,
                 "--out", str(out)]) == 0


def test_fk_empty_trajectory(tmp_path, capsys):
    path = write(tmp_path / "empty.json", {"fps": 30.0, "joint_names": ["shoulder", "elbow"], "frames": []})
    assert main(["fk", "--model", "planar2", "--trajectory", path, "--out", str(tmp_path / "o.json")]) != 0
    assert "no frames" in capsys.readouterr().err


def test_fk_missing_joint(tmp_path, capsys):
    model = load_fixture("planar2")
    names = list(model.joint_names)
    missing = names[1]
    traj = {"fps": 30.0, "joint_names": [names[0], "wrist"],
            "frames": [{"root_pos": [0, 0, 0], "root_quat_wxyz": [1, 0, 0, 0], "q": [0, 0]}]}
    path = write(tmp_path / "t.json", traj)
    assert main(["fk", "--model", "planar2", "--trajectory", path, "--out", str(tmp_path / "o.json")]) != 0
    assert missing in capsys.readouterr().err


def test_unknown_model_and_bad_json(tmp_path, capsys, planar2_traj):
    assert main(["fk", "--model", "nonexistent_robot", "--trajectory", planar2_traj, "--out", str(tmp_path / "o")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["fk", "--model", "planar2", "--trajectory", str(bad), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "not found" in err and "invalid JSON" in err


def test_model_error_has_path(tmp_path, capsys, planar2_traj):
    doc = json.loads(fixture_path("planar2.json").read_text())
    doc["links"][1]["joint"]["axis"] = [0, 0, 0]
    path = write(tmp_path / "m.json", doc)
    assert main(["fk", "--model", path, "--trajectory", planar2_traj, "--out", str(tmp_path / "o")]) == 2
    assert "links[1]" in capsys.readouterr().err


# --------------------------------------------------------------------------- retarget


def humanoid_inputs(tmp_path, frames=8):
    model = load_fixture("toy_humanoid")
    traj = smooth_trajectory(model, frames, root=STAND_ROOT, seed=1, amplitude=0.2)
    motion = motion_from_trajectory(model, traj, HUMANOID_BODIES)
    mapping = identity_mapping(HUMANOID_BODIES, HUMANOID_BODIES)
    return traj, write(tmp_path / "motion.json", motion.to_dict()), write(tmp_path / "mapping.json", mapping.to_dict())


def test_retarget_self_consistency(tmp_path):
    truth, motion, mapping = humanoid_inputs(tmp_path)
    out = tmp_path / "out.json"
    assert main(["retarget", "--model", "toy_humanoid", "--mapping", mapping, "--motion", motion, "--out", str(out)]) == 0
    result = RobotTrajectory.from_dict(json.loads(out.read_text()))
    assert np.abs(result.q - truth.q).max() < 1e-3
    rows = read_csv(tmp_path / "out.diagnostics.csv")
    assert len(rows) == len(truth) and all(r["converged"] == "1" and r["error"] == "" for r in rows)


def test_retarget_unknown_body(tmp_path, capsys):
    _, motion, _ = humanoid_inputs(tmp_path, 2)
    mapping = write(tmp_path / "bad_map.json", {"pairs": [{"human_body": "tail", "robot_body": "pelvis"}]})
    assert main(["retarget", "--model", "toy_humanoid", "--mapping", mapping, "--motion", motion,
                 "--out", str(tmp_path / "o.json")]) != 0
    assert "tail" in capsys.readouterr().err


def test_retarget_unknown_solver_key(tmp_path, capsys):
    _, motion, mapping = humanoid_inputs(tmp_path, 2)
    cfg = write(tmp_path / "cfg.json", {"solver": {"max_iterations": 5, "bogus": 1}})
    assert main(["retarget", "--model", "toy_humanoid", "--mapping", mapping, "--motion", motion, "--config", cfg,
                 "--out", str(tmp_path / "o.json")]) == 2
    assert "bogus" in capsys.readouterr().err


def saddle_files(tmp_path):
    motion, mapping = saddle_sweep()
    cfg = write(tmp_path / "cfg.json", {"solver": {"optimize_root": False}})
    return write(tmp_path / "m.json", motion.to_dict()), write(tmp_path / "map.json", mapping.to_dict()), cfg


def test_retarget_cold_restart_shows_jump(tmp_path):
    motion, mapping, cfg = saddle_files(tmp_path)
    steps = {}
    for flag in ([], ["--cold-restart"]):
        out = tmp_path / f"out{len(flag)}.json"
        assert main(["retarget", "--model", "planar2", "--mapping", mapping, "--motion", motion, "--config", cfg,
                     "--out", str(out), *flag]) == 0
        rows = read_csv(tmp_path / f"out{len(flag)}.diagnostics.csv")
        steps[bool(flag)] = [float(r["max_joint_step"]) for r in rows]
    cold = sum(s > 0.5 for s in steps[True])
    warm = sum(s > 0.5 for s in steps[False])
    assert cold >= 1 and warm <= cold


# --------------------------------------------------------------------------- certify


def certify(tmp_path, model, config=None, extra=()):
    out = tmp_path / "cert.json"
    argv = ["certify", "--model", model, "--out", str(out), *extra]
    if config is not None:
        argv += ["--config", write(tmp_path / "ccfg.json", config)]
    return main(argv), out


def test_certify_planar2(tmp_path):
    code, out = certify(tmp_path, "planar2", {"weights": {"w_R": 0.0, "w_p": 1.0}, "error_map": "decoupled"})
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["found"] and doc["source"] == "source_i_interior"
    assert doc["min_eigenvalue"] <= -0.41 + 1e-6
    assert doc["min_eigenvalue"] == pytest.approx(1 - math.sqrt(2), abs=1e-6)
    assert doc["verified_quadratic_form"] < 0


def test_certify_default_config_finds_curvature(tmp_path):
    code, out = certify(tmp_path, "planar2")
    assert code == 0 and json.loads(out.read_text())["quadratic_form"] < 0


def test_certify_one_dof(tmp_path, capsys):
    code, _ = certify(tmp_path, "single_joint")
    assert code != 0
    assert "precondition" in capsys.readouterr().err


def test_certify_wrist_source_ii(tmp_path):
    code, out = certify(tmp_path, "wrist2", {"weights": {"w_R": 1.0, "w_p": 0.0}})
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["source"].startswith("source_ii") and doc["quadratic_form"] < -1e-6


def test_certify_bad_config(tmp_path, capsys):
    code, _ = certify(tmp_path, "planar2", {"weights": {"w_R": 0.0, "w_p": 0.0}})
    assert code == 2


# --------------------------------------------------------------------------- filter


def filter_inputs(tmp_path):
    model = load_fixture("toy_humanoid")
    # straight legs put the feet on the ground; mid-range bends the knees
    q = np.zeros((20, model.dof))
    good = RobotTrajectory.from_arrays(30.0, model.joint_names, q, STAND_ROOT)
    q_jump = q.copy()
    q_jump[10:, 0] += 0.65
    jumpy = RobotTrajectory.from_arrays(30.0, model.joint_names, q_jump, STAND_ROOT)
    write(tmp_path / "good.json", good.to_dict())
    write(tmp_path / "jumpy.json", jumpy.to_dict())
    human = {"fps": 30.0, "body_names": ["pelvis", "lf", "rf"],
             "frames": [{"poses": [{"pos": [0, 0, 0.9], "quat_wxyz": [1, 0, 0, 0]},
                                   {"pos": [0, 0.1, 0], "quat_wxyz": [1, 0, 0, 0]},
                                   {"pos": [0, -0.1, 0], "quat_wxyz": [1, 0, 0, 0]}]}] * 10}
    write(tmp_path / "human.json", human)
    items = [
        {"path": "good.json", "kind": "robot"},
        {"path": "jumpy.json", "kind": "robot"},
        {"path": "human.json", "kind": "human", "feet": ["lf", "rf"], "masses": {"pelvis": 1.0}},
    ]
    cfg = write(tmp_path / "fcfg.json", {"filter": {"qdot_max": 15.0}})
    return items, cfg


def test_filter_summary(tmp_path):
    items, cfg = filter_inputs(tmp_path)
    manifest = write(tmp_path / "manifest.json", {"items": items})
    out = tmp_path / "res"
    assert main(["filter", "--manifest", manifest, "--model", "toy_humanoid", "--config", cfg,
                 "--out", str(out), "--jobs", "3"]) == 0
    rows = read_csv(out / "summary.csv")
    assert len(rows) == len(items)
    assert [r["verdict"] for r in rows] == ["keep", "reject", "keep"]
    assert rows[1]["reasons"] == "joint_velocity"
    reports = json.loads((out / "reports.json").read_text())
    assert [r["index"] for r in reports] == [0, 1, 2]


def test_filter_partial_failure(tmp_path, capsys):
    items, cfg = filter_inputs(tmp_path)
    items.append({"path": "missing.json", "kind": "robot"})
    items.append({"path": "good.json", "kind": "dance"})
    manifest = write(tmp_path / "manifest.json", items)
    out = tmp_path / "res"
    assert main(["filter", "--manifest", manifest, "--model", "toy_humanoid", "--config", cfg, "--out", str(out)]) == 1
    rows = read_csv(out / "summary.csv")
    assert len(rows) == len(items)
    assert [r["status"] for r in rows] == ["ok", "ok", "ok", "error", "error"]
    err = capsys.readouterr().err
    assert "item 3" in err and "item 4" in err


# --------------------------------------------------------------------------- metrics and cluster


def test_metrics_command(tmp_path):
    model = load_fixture("toy_humanoid")
    q = np.tile(model.mid_range(), (10, 1))
    ref = RobotTrajectory.from_arrays(30.0, model.joint_names, q, STAND_ROOT)
    shifted = RobotTrajectory.from_arrays(30.0, model.joint_names, q, Pose(np.eye(3), [0.05, 0, 0.95]))
    q2 = q.copy()
    q2[5:, 2] += 0.65
    jumpy = RobotTrajectory.from_arrays(30.0, model.joint_names, q2, STAND_ROOT)
    paths = [write(tmp_path / n, t.to_dict()) for n, t in (("a.json", shifted), ("b.json", jumpy), ("r.json", ref))]
    out = tmp_path / "m.csv"
    assert main(["metrics", "--model", "toy_humanoid", "--trajectory", paths[0], paths[1],
                 "--reference", paths[2], paths[2], "--out", str(out)]) == 0
    rows = read_csv(out)
    assert float(rows[0]["mpjpe"]) < 1e-12 and float(rows[0]["w_mpjpe"]) == pytest.approx(0.05, abs=1e-12)
    assert rows[0]["joint_jump_frames"] == "0" and rows[1]["joint_jump_frames"] == "1"


def test_metrics_reference_count_mismatch(tmp_path, planar2_traj):
    assert main(["metrics", "--model", "planar2", "--trajectory", planar2_traj, planar2_traj,
                 "--reference", planar2_traj, "--out", str(tmp_path / "m.csv")]) == 2


def embeddings(tmp_path):
    rng = np.random.default_rng(0)
    vecs = np.vstack([rng.normal([5, 0, 0], 0.3, (6, 3)), rng.normal([0, 5, 0], 0.3, (6, 3))])
    return write(tmp_path / "emb.json", {"ids": [f"clip{i}" for i in range(12)], "vectors": vecs.tolist()})


def test_cluster_command(tmp_path):
    out = tmp_path / "c.csv"
    assert main(["cluster", "--embeddings", embeddings(tmp_path), "--k", "2", "--seed", "4", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert [r["id"] for r in rows] == [f"clip{i}" for i in range(12)]
    labels = [r["cluster"] for r in rows]
    assert len(set(labels[:6])) == 1 and len(set(labels[6:])) == 1 and labels[0] != labels[6]


def test_cluster_bad_k(tmp_path, capsys):
    assert main(["cluster", "--embeddings", embeddings(tmp_path), "--k", "13", "--out", str(tmp_path / "c.csv")]) == 2


# --------------------------------------------------------------------------- determinism


def run_all(tmp_path, tag):
    """Run every command into ``tmp_path/tag`` and return the bytes of each output file."""
    d = tmp_path / tag
    d.mkdir()
    inputs = tmp_path / "inputs"
    _, motion, mapping = humanoid_inputs(inputs, 4) if not (inputs / "motion.json").exists() else (
        None, str(inputs / "motion.json"), str(inputs / "mapping.json"))
    traj = str(inputs / "traj.json")
    if not (inputs / "traj.json").exists():
        write(inputs / "traj.json", smooth_trajectory(load_fixture("toy_humanoid"), 5, root=STAND_ROOT).to_dict())
    if not (inputs / "manifest.json").exists():
        items, _ = filter_inputs(inputs)
        write(inputs / "manifest.json", items)
    emb = embeddings(inputs)
    commands = [
        ["fk", "--model", "toy_humanoid", "--trajectory", traj, "--out", str(d / "fk.json")],
        ["retarget", "--model", "toy_humanoid", "--mapping", mapping, "--motion", motion, "--out", str(d / "rt.json")],
        ["certify", "--model", "planar2", "--out", str(d / "cert.json"), "--seed", "7"],
        ["filter", "--manifest", str(inputs / "manifest.json"), "--model", "toy_humanoid", "--out", str(d / "filter"),
         "--jobs", "4"],
        ["metrics", "--model", "toy_humanoid", "--trajectory", traj, "--reference", traj, "--out", str(d / "m.csv")],
        ["cluster", "--embeddings", emb, "--k", "3", "--seed", "7", "--out", str(d / "c.csv")],
    ]
    for argv in commands:
        assert main(argv) == 0, argv
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_byte_identical_reruns(tmp_path):
    (tmp_path / "inputs").mkdir()
    a = run_all(tmp_path, "a")
    b = run_all(tmp_path, "b")
    assert len(a) == 8
    for name in a:
        # filter reports embed absolute item paths only through the manifest, which is shared
        assert a[name] == b[name], name


def test_module_entry_point(tmp_path, planar2_traj):
    out = tmp_path / "fk.json"
    proc = subprocess.run([sys.executable, "-m", "retargetlab", "fk", "--model", "planar2", "--trajectory", planar2_traj,
                           "--out", str(out)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert out.exists()
