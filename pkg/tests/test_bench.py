import csv
import io
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from stackplan.bench import (CSV_COLUMNS, CorpusKind, CorpusSpec, Task, efficiency_improvement,
                             generate_scene, run_benchmark)
from stackplan.errors import InvalidInput, SceneGenerationFailed
from stackplan.physics import SimConfig, World


def test_efficiency_reference_times():
    assert efficiency_improvement(56.16, 37.56) == pytest.approx(49.52, abs=0.01)


def test_efficiency_other_reference_times():
    # values frozen from the formula itself
    assert efficiency_improvement(64.08, 32.06) == pytest.approx(99.88, abs=0.01)
    assert efficiency_improvement(62.62, 31.70) == pytest.approx(97.54, abs=0.01)


def test_efficiency_equal_times():
    assert efficiency_improvement(30.0, 30.0) == 0.0


def test_efficiency_rejects_nonpositive():
    with pytest.raises(InvalidInput):
        efficiency_improvement(10.0, 0.0)


times = st.floats(0.1, 1000.0)


@given(times, times, st.floats(0.01, 100.0))
def test_efficiency_scale_invariant(tb, tp, c):
    assert efficiency_improvement(c * tb, c * tp) == pytest.approx(efficiency_improvement(tb, tp),
                                                                   rel=1e-9, abs=1e-9)


@given(times, times)
def test_efficiency_sign(tb, tp):
    e = efficiency_improvement(tb, tp)
    assert (e > 0) == (tb > tp) and (e < 0) == (tb < tp)


def test_corpus_spec_defaults_and_validation():
    spec = CorpusSpec()
    assert spec.box_catalog == ((0.23, 0.31, 0.25), (0.20, 0.20, 0.20), (0.50, 0.17, 0.17))
    with pytest.raises(InvalidInput):
        CorpusSpec(boxes_per_scene=(3, 2))
    with pytest.raises(InvalidInput):
        CorpusSpec(box_catalog=())
    with pytest.raises(InvalidInput):
        CorpusSpec(n_scenes=0)


def test_structured_grid_of_cubes():
    spec = CorpusSpec(kind=CorpusKind.STRUCTURED, n_scenes=1, boxes_per_scene=(9, 9),
                      box_catalog=((0.2, 0.2, 0.2),))
    truth, obs = generate_scene(spec, 0)
    assert len(truth.boxes) == 9 and len(obs.boxes) == 9
    heights = sorted(round(b.position[1], 2) for b in truth.boxes)
    assert heights == [0.1] * 3 + [0.3] * 3 + [0.5] * 3
    assert all(abs(b.yaw) < 1e-3 for b in truth.boxes)
    assert len({round(m.z_front, 4) for m in obs.metric()}) > 1


def test_unstructured_truth_is_at_rest():
    spec = CorpusSpec(n_scenes=3)
    for i in range(3):
        truth, obs = generate_scene(spec, i)
        truth.validate()
        assert all(abs(np.degrees(b.yaw)) <= 35.0 for b in truth.boxes)
        w = World(truth, SimConfig(rest_exit=False))
        w.settle(1.0)
        assert w.kinetic_energy() < 1e-4


def test_generation_deterministic():
    spec = CorpusSpec(n_scenes=2, seed=4)
    a, _ = generate_scene(spec, 1)
    b, _ = generate_scene(spec, 1)
    assert a.to_dict() == b.to_dict()


def test_generation_failure():
    spec = CorpusSpec(n_scenes=1, boxes_per_scene=(12, 12), box_catalog=((0.45, 0.45, 0.25),),
                      placement_budget=5, scene_budget=1)
    with pytest.raises(SceneGenerationFailed):
        generate_scene(spec, 0)


def test_generation_index_range():
    with pytest.raises(InvalidInput):
        generate_scene(CorpusSpec(n_scenes=2), 2)


def test_lone_box_corpus_no_difference():
    report = run_benchmark(CorpusSpec(n_scenes=3, boxes_per_scene=(1, 1)), k=2)
    assert report.physics.success_rate == report.heuristic.success_rate == 1.0
    assert report.physics.avg_est_time_s == report.heuristic.avg_est_time_s
    assert report.efficiency_improvement == 0.0
    assert report.success_rate_delta == 0.0


@pytest.fixture(scope="module")
def small_report():
    return run_benchmark(CorpusSpec(n_scenes=3, boxes_per_scene=(3, 3), seed=2), k=3)


def test_csv_accounting(small_report):
    rows = list(csv.DictReader(io.StringIO(small_report.to_csv())))
    assert tuple(rows[0].keys()) == CSV_COLUMNS
    pairs = Counter((r["scene_id"], r["target_id"], r["approach"]) for r in rows)
    assert set(pairs.values()) == {1}
    per_scene = Counter((r["scene_id"], r["target_id"]) for r in rows)
    assert set(per_scene.values()) == {2}
    assert all(r["planning_time_s"] == "" for r in rows)
    assert 0.0 <= small_report.physics.success_rate <= 1.0


def test_benchmark_deterministic(small_report):
    again = run_benchmark(CorpusSpec(n_scenes=3, boxes_per_scene=(3, 3), seed=2), k=3)
    assert again.to_csv() == small_report.to_csv()
    assert again.to_dict() == small_report.to_dict()


def test_benchmark_independent_of_workers(small_report):
    par = run_benchmark(CorpusSpec(n_scenes=3, boxes_per_scene=(3, 3), seed=2), k=3, workers=2)
    assert par.to_csv() == small_report.to_csv()


def test_clear_task_rows():
    report = run_benchmark(CorpusSpec(n_scenes=2, boxes_per_scene=(2, 3), seed=5), Task.CLEAR, k=2)
    assert {r.target_id for r in report.rows} == {""}
    assert len(report.rows) == 4
