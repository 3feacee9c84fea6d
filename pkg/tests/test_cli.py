import json
import subprocess
import sys

import numpy as np
import pytest

from echoroom.cli import main
from echoroom.cli.files import read_result
from echoroom.experiments import body_payload, default_drone, default_room, scene_payload

from conftest import generic_pose


@pytest.fixture
def inputs(tmp_path):
    scene = tmp_path / "scene.json"
    drone = tmp_path / "drone.json"
    scene.write_text(json.dumps(scene_payload(default_room())))
    body = default_drone()
    drone.write_text(json.dumps(body_payload(body, generic_pose(21))))
    return scene, drone


def run(*argv):
    return main([str(a) for a in argv])


def test_simulate_writes_four_delay_lists(inputs, tmp_path):
    scene, drone = inputs
    out = tmp_path / "echoes.json"
    assert run("simulate", scene, drone, "--out", out) == 0
    doc = json.loads(out.read_text())
    assert len(doc["delays"]) == 4
    assert all(len(d) == 6 for d in doc["delays"])
    assert "truth" not in doc


def test_simulate_with_truth(inputs, tmp_path):
    scene, drone = inputs
    out = tmp_path / "echoes.json"
    assert run("simulate", scene, drone, "--with-truth", "--out", out) == 0
    assert len(json.loads(out.read_text())["truth"]) == 4


def test_zero_sigma_matches_omitted(inputs, tmp_path):
    scene, drone = inputs
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run("simulate", scene, drone, "--seed", 4, "--out", a) == 0
    assert run("simulate", scene, drone, "--seed", 4, "--sigma-t", 0, "--out", b) == 0
    assert a.read_bytes() == b.read_bytes()


def test_noisy_simulate_reproducible(inputs, tmp_path):
    scene, drone = inputs
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    run("simulate", scene, drone, "--seed", 4, "--sigma-t", 1e-6, "--out", a)
    run("simulate", scene, drone, "--seed", 4, "--sigma-t", 1e-6, "--out", b)
    assert a.read_bytes() == b.read_bytes()


def test_coplanar_drone_exit_3(inputs, tmp_path, capsys):
    scene, _ = inputs
    bad = tmp_path / "flat.json"
    bad.write_text(json.dumps({"mics": [[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]]}))
    out = tmp_path / "never.json"
    assert run("simulate", scene, bad, "--out", out) == 3
    assert "coplanar" in capsys.readouterr().err
    assert not out.exists()


def test_schema_error_names_field(inputs, tmp_path, capsys):
    _, drone = inputs
    bad = tmp_path / "scene.json"
    bad.write_text(json.dumps({"walls": [{"vertices": [[0, 0, 0], [1, 0], [0, 1, 0]]}], "source": {"mode": "drone"}}))
    out = tmp_path / "never.json"
    assert run("simulate", bad, drone, "--out", out) == 2
    assert "$.walls[0].vertices[1]" in capsys.readouterr().err
    assert not out.exists()


def test_invalid_json_exit_2(inputs, tmp_path, capsys):
    _, drone = inputs
    bad = tmp_path / "scene.json"
    bad.write_text("{not json")
    assert run("simulate", bad, drone) == 2
    assert "line 1" in capsys.readouterr().err


def test_non_unit_quaternion_exit_3(inputs, tmp_path):
    scene, _ = inputs
    bad = tmp_path / "d.json"
    doc = body_payload(default_drone(), generic_pose(1))
    doc["pose"]["quaternion"] = [2.0, 0, 0, 0]
    bad.write_text(json.dumps(doc))
    assert run("simulate", scene, bad) == 3


@pytest.fixture
def echoes(inputs, tmp_path):
    scene, drone = inputs
    out = tmp_path / "echoes.json"
    assert run("simulate", scene, drone, "--with-truth", "--out", out) == 0
    return out


def _same_planes(a, b):
    if len(a) != len(b):
        return False
    return all(min(x.plane.angle_to(y.plane) + x.plane.offset_difference(y.plane) for y in b) < 1e-9 for x in a)


def test_round_trip_recovers_six_walls(inputs, echoes, tmp_path):
    _, drone = inputs
    out = tmp_path / "result.json"
    assert run("reconstruct", echoes, drone, "--source", "auto", "--out", out) == 0
    walls, doc = read_result(out)
    assert len(walls) == 6
    assert not any(w["ghost"] for w in doc["walls"])
    room = default_room()
    for wall in room.walls:
        assert min(w.plane.angle_to(wall.plane) + w.plane.offset_difference(wall.plane) for w in walls) < 1e-8
    assert doc["metadata"]["config_digest"]


def test_fixed_source_flag(inputs, echoes, tmp_path):
    _, drone = inputs
    out = tmp_path / "result.json"
    assert run("reconstruct", echoes, drone, "--source", "fixed:1.7,2.3,1.1", "--out", out) == 0
    assert len(read_result(out)[0]) == 6


def test_cm_and_rank_agree(inputs, echoes, tmp_path):
    _, drone = inputs
    a, b = tmp_path / "cm.json", tmp_path / "rank.json"
    assert run("reconstruct", echoes, drone, "--method", "cm", "--out", a) == 0
    assert run("reconstruct", echoes, drone, "--method", "rank", "--out", b) == 0
    assert _same_planes(read_result(a)[0], read_result(b)[0])


def test_auto_source_without_direct_exit_4(inputs, echoes, tmp_path):
    _, drone = inputs
    doc = json.loads(echoes.read_text())
    del doc["direct"]
    stripped = tmp_path / "nodirect.json"
    stripped.write_text(json.dumps(doc))
    assert run("reconstruct", stripped, drone, "--source", "auto") == 4


def test_drone_source_without_loudspeaker_exit_4(inputs, echoes, tmp_path):
    bare = tmp_path / "bare.json"
    doc = body_payload(default_drone(), generic_pose(21))
    del doc["loudspeaker"]
    bare.write_text(json.dumps(doc))
    assert run("reconstruct", echoes, bare, "--source", "drone") == 4


def test_result_read_back_is_exact(inputs, echoes, tmp_path):
    _, drone = inputs
    out = tmp_path / "result.json"
    run("reconstruct", echoes, drone, "--out", out)
    walls, doc = read_result(out)
    for w, raw in zip(walls, doc["walls"]):
        assert w.mirror.tolist() == raw["mirror"]
        assert w.residual == raw["residual"]
    again = tmp_path / "again.json"
    run("reconstruct", echoes, drone, "--out", again)
    assert out.read_bytes() == again.read_bytes()


def test_summary_table_on_stdout(inputs, echoes, tmp_path, capsys):
    _, drone = inputs
    run("reconstruct", echoes, drone, "--out", tmp_path / "r.json")
    assert "offset" in capsys.readouterr().out
    run("reconstruct", echoes, drone, "--quiet", "--out", tmp_path / "r.json")
    assert capsys.readouterr().out == ""


def test_montecarlo_outputs(tmp_path):
    out = tmp_path / "mc"
    assert run("montecarlo", "--trials", 25, "--seed", 3, "--out", out, "--quiet") == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["trials"] == 25 and summary["ghost_trial_count"] == 0
    rows = (out / "trials.csv").read_text().splitlines()
    assert rows[0] == "trial,ghost_count,detected,heard,max_residual"
    assert len(rows) == 26


def test_montecarlo_csv_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run("montecarlo", "--trials", 10, "--seed", 8, "--out", a, "--quiet")
    run("montecarlo", "--trials", 10, "--seed", 8, "--out", b, "--quiet")
    assert (a / "trials.csv").read_bytes() == (b / "trials.csv").read_bytes()
    assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()


def test_montecarlo_zero_trials(tmp_path):
    out = tmp_path / "mc"
    assert run("montecarlo", "--trials", 0, "--out", out, "--quiet") == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["trials"] == 0 and summary["ghost_trial_count"] == 0
    assert (out / "trials.csv").read_text() == "trial,ghost_count,detected,heard,max_residual\n"


def test_montecarlo_with_files_and_box(inputs, tmp_path):
    scene, drone = inputs
    out = tmp_path / "mc"
    assert run("montecarlo", scene, drone, "--trials", 5, "--box", "2,2,1,4,3,2", "--mode", "drone",
               "--out", out, "--quiet") == 0
    assert json.loads((out / "summary.json").read_text())["mode"] == "drone"


def test_ghost_demo(tmp_path):
    out = tmp_path / "ghost"
    assert run("ghost-demo", "--out", out, "--quiet") == 0
    doc = json.loads((out / "result.json").read_text())
    flagged = [w for w in doc["walls"] if w.get("ghost")]
    assert len(flagged) == 1 and flagged[0]["matches_analytic_ghost"]
    for name in ("scene.json", "drone.json", "ghost_plane.json"):
        assert (out / name).exists()


def test_ghost_demo_round_trip(tmp_path):
    out = tmp_path / "ghost"
    run("ghost-demo", "--out", out, "--quiet")
    echoes, result = tmp_path / "e.json", tmp_path / "r.json"
    assert run("simulate", out / "scene.json", out / "drone.json", "--with-truth", "--out", echoes) == 0
    assert run("reconstruct", echoes, out / "drone.json", "--source", "fixed:7,2,0", "--out", result,
               "--quiet") == 0
    ghost = json.loads((out / "ghost_plane.json").read_text())
    walls = json.loads(result.read_text())["walls"]
    hit = [w for w in walls if w["ghost"]]
    assert len(hit) == 1
    assert abs(abs(np.dot(hit[0]["normal"], ghost["normal"])) - 1) < 1e-12
    assert abs(hit[0]["offset"] - ghost["offset"]) < 1e-8


def test_ghost_demo_perturbed_has_no_ghost(tmp_path):
    out = tmp_path / "ghost"
    assert run("ghost-demo", "--perturb", 0.1, "--out", out, "--quiet") == 1
    doc = json.loads((out / "result.json").read_text())
    assert not any(w.get("ghost") for w in doc["walls"])


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "echoroom", "ghost-demo", "--quiet", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
