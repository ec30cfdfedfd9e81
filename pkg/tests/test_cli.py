import json

import pytest

from conftest import cube, scene_of
from stackplan.cli import main
from stackplan.reconstruct import ObservationSet, sample_batch
from stackplan.render import RenderSpec, collapsed_at, read_trajectory, record_removals, write_jsonl
from stackplan.schemas import check_file, validate_document
from stackplan.errors import InvalidInput


@pytest.fixture(scope="module")
def fx(tmp_path_factory):
    out = tmp_path_factory.mktemp("fx")
    assert main(["fixtures", "--out", str(out)]) == 0
    return out


def _load(path):
    return json.loads(path.read_text())


def test_gen_structured_repeatable(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["gen", "--kind", "structured", "--boxes", "9", "--seed", "7", "--out", str(a)]) == 0
    assert main(["gen", "--kind", "structured", "--boxes", "9", "--seed", "7", "--out", str(b)]) == 0
    files = sorted(p.name for p in a.iterdir())
    assert len(files) == 2
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes()
    scene = _load(next(a.glob("*.scene.json")))
    assert len(scene["boxes"]) == 9


def test_gen_count_and_samplable(tmp_path):
    assert main(["gen", "--scenes", "3", "--out", str(tmp_path)]) == 0
    obs_files = sorted(tmp_path.glob("*.obs.json"))
    assert len(obs_files) == 3 and len(list(tmp_path.glob("*.scene.json"))) == 3
    obs = ObservationSet.from_dict(_load(obs_files[0]))
    for s in sample_batch(obs, k=2):
        s.scene.validate()


def test_gen_failure_exit_2(tmp_path, capsys):
    assert main(["gen", "--boxes", "40", "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_plan_physics_demo_two_actions_and_repeatable(fx, tmp_path, capsys):
    p1, p2 = tmp_path / "p1.json", tmp_path / "p2.json"
    assert main(["plan", str(fx / "structured_demo.json"), "--out", str(p1)]) == 0
    out = capsys.readouterr().out
    assert "simulations run" in out and "planning time" in out
    assert main(["plan", str(fx / "structured_demo.json"), "--out", str(p2)]) == 0
    assert p1.read_bytes() == p2.read_bytes()
    assert [a["box_id"] for a in _load(p1)["actions"]] == ["X", "T"]


def test_plan_heuristic_clear_covers_all(fx, tmp_path):
    out = tmp_path / "h.json"
    assert main(["plan", str(fx / "structured_demo.obs.json"), "--task", "clear",
                 "--approach", "heuristic", "--out", str(out)]) == 0
    assert len(_load(out)["actions"]) == 5


def test_plan_input_errors(fx, tmp_path):
    assert main(["plan", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["plan", str(bad)]) == 2
    assert main(["plan", str(fx / "chain.obs.json")]) == 2  # no target
    assert main(["plan", str(fx / "chain.obs.json"), "--target", "ZZ"]) == 2


def test_plan_failure_exit_3(fx, tmp_path, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"schema_version": 1, "kind": "config",
                               "thresholds": {"slop": 1e-12}, "k": 2}))
    monkeypatch.setenv("STACKPLAN_CONFIG", str(cfg))
    assert main(["plan", str(fx / "chain.obs.json"), "--task", "clear"]) == 3


def test_validate_exit_codes(fx, tmp_path, capsys):
    pp, hp = tmp_path / "p.json", tmp_path / "h.json"
    ce = str(fx / "counterexample.json")
    assert main(["plan", ce, "--out", str(pp)]) == 0
    assert main(["plan", ce, "--approach", "heuristic", "--out", str(hp)]) == 0
    assert main(["validate", str(fx / "counterexample.scene.json"), str(pp)]) == 0
    capsys.readouterr()
    rep = tmp_path / "rep.json"
    assert main(["validate", ce, str(hp), "--out", str(rep)]) == 1
    doc = _load(rep)
    assert not doc["success"] and doc["collapsed_during_execution"]
    validate_document(doc)


def test_validate_empty_plan(fx, tmp_path):
    empty = tmp_path / "e.json"
    empty.write_text(json.dumps({"schema_version": 1, "kind": "plan", "approach": "heuristic",
                                 "task": "clear", "target": None, "actions": []}))
    rep = tmp_path / "r.json"
    assert main(["validate", str(fx / "chain.json"), str(empty), "--out", str(rep)]) == 0
    assert _load(rep)["boxes_removed"] == 0


def test_bench_lone_boxes(tmp_path):
    assert main(["-k", "2", "bench", "--scenes", "2", "--boxes", "1", "--out", str(tmp_path)]) == 0
    summary = _load(tmp_path / "summary.json")
    assert summary["efficiency_improvement_pct"] == 0.0
    assert check_file(tmp_path / "summary.json") == ["bench_report"]


def test_bench_repeatable(tmp_path):
    args = ["-k", "2", "bench", "--scenes", "2", "--boxes", "2", "--seed", "3"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("bench.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.fixture(scope="module")
def bottom_removal(tmp_path_factory):
    path = tmp_path_factory.mktemp("traj") / "t.jsonl"
    lines = record_removals(scene_of(cube("A", 0.5), cube("B", 0.5, 0.2)), ["A"])
    write_jsonl(lines, path)
    return path


def test_simulate_writes_trajectory(fx, tmp_path, capsys):
    t = tmp_path / "t.jsonl"
    assert main(["simulate", str(fx / "chain.json"), "--remove", "B", "--trajectory", str(t)]) == 0
    assert "B: SAFE" in capsys.readouterr().out
    kinds = check_file(t)
    assert kinds[0] == "trajectory_header" and kinds[-1] == "removal_outcome"


def test_render_final_frame_highlights_collapse(bottom_removal, tmp_path):
    traj = read_trajectory(bottom_removal)
    assert "B" in collapsed_at(traj, len(traj.steps) - 1)
    assert main(["render", str(bottom_removal), "--out", str(tmp_path), "--frame-stride", "1"]) == 0
    frames = sorted(tmp_path.glob("frame_*.svg"))
    assert len(frames) == len(traj.steps)
    last = frames[-1].read_text()
    assert 'data-id="B" data-role="collapsed"' in last
    first = frames[0].read_text()
    assert 'data-id="B" data-role="box"' in first


def test_render_stride_one_frame_per_second(bottom_removal, tmp_path):
    traj = read_trajectory(bottom_removal)
    assert main(["render", str(bottom_removal), "--out", str(tmp_path), "--frame-stride", "240"]) == 0
    frames = sorted(tmp_path.glob("*.svg"))
    assert len(frames) == -(-len(traj.steps) // 240)
    assert 't=1.000s' in frames[1].read_text()


def test_render_truncated_input(bottom_removal, tmp_path):
    text = bottom_removal.read_text()
    cut = tmp_path / "cut.jsonl"
    cut.write_text(text[: len(text) // 2])
    traj = read_trajectory(cut)
    assert traj.truncated and traj.steps and not traj.outcomes
    assert main(["render", str(cut), "--out", str(tmp_path / "f"), "--frame-stride", "60"]) == 0
    assert len(list((tmp_path / "f").glob("*.svg"))) == -(-len(traj.steps) // 60)


def test_render_bad_input(tmp_path):
    bad = tmp_path / "x.jsonl"
    bad.write_text('{"kind": "step"}\n')
    assert main(["render", str(bad), "--out", str(tmp_path)]) == 2
    with pytest.raises(InvalidInput):
        RenderSpec(frame_stride=0)


def test_check_accepts_all_outputs(fx, capsys):
    for p in sorted(fx.glob("*.json")):
        assert main(["check", str(p)]) == 0


def test_check_rejects_bad_documents(tmp_path):
    bad = tmp_path / "s.json"
    bad.write_text(json.dumps({"schema_version": 1, "kind": "scene", "shelf": {"w": 1, "h": 1, "d": 1},
                               "boxes": [{"id": "a", "position": [0, 0, 0]}]}))
    assert main(["check", str(bad)]) == 2
    unversioned = tmp_path / "u.json"
    unversioned.write_text(json.dumps({"kind": "plan", "approach": "physics", "task": "extract",
                                       "actions": []}))
    assert main(["check", str(unversioned)]) == 2


def test_schema_command(capsys):
    assert main(["schema", "plan"]) == 0
    assert json.loads(capsys.readouterr().out)["properties"]["kind"]["const"] == "plan"
