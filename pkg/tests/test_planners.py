import pytest

from conftest import cube, scene_of
from stackplan.bench import CorpusSpec, generate_scene
from stackplan.collapse import (AggregatedOutcome, Classification, CollapseThresholds,
                               RemovalOutcome)
from stackplan.errors import InvalidInput, UnclearableResidue, UnknownBox
from stackplan.fixtures import load_fixture
from stackplan.physics import SimConfig
from stackplan.planners import (ActionPlan, Approach, PlannedAction, height_order,
                                plan_clearance_heuristic, plan_clearance_physics,
                                plan_extraction_heuristic, plan_extraction_physics,
                                validate_plan)
from stackplan.reconstruct import MetricBoxObservation, ObservationSet, observe_scene
from stackplan.scene_model import Shelf, static_collapse_oracle


@pytest.fixture(scope="module")
def chain():
    return load_fixture("chain")


@pytest.fixture(scope="module")
def demo():
    return load_fixture("structured_demo")


def test_lone_top_target():
    obs = observe_scene(scene_of(cube("A", 0.5), cube("B", 0.5, 0.2)))
    plan = plan_extraction_physics(obs, "B", k=3)
    assert plan.box_ids == ["B"]
    assert plan.actions[0].predicted.safe


def test_chain_backtracks(chain):
    truth, obs, target = chain
    # each step of the chain is confirmed by the static oracle
    assert static_collapse_oracle(truth, "T") == {"A", "B"}
    assert static_collapse_oracle(truth.without("B"), "A") == set()
    plan = plan_extraction_physics(obs, target)
    assert plan.box_ids == ["B", "A", "T"]
    assert plan.simulations_run <= 3 ** 2 * 10
    assert validate_plan(truth, plan).success


def test_structured_demo_counts(demo):
    truth, obs, target = demo
    physics = plan_extraction_physics(obs, target)
    heuristic = plan_extraction_heuristic(obs, target)
    assert physics.box_ids == ["X", "T"]
    assert len(heuristic) == 4
    assert validate_plan(truth, physics).success


def test_physics_planner_deterministic(demo):
    _, obs, target = demo
    a = plan_extraction_physics(obs, target, k=4).to_dict()
    b = plan_extraction_physics(obs, target, k=4).to_dict()
    assert a == b


def test_physics_planner_errors(demo):
    _, obs, _ = demo
    with pytest.raises(UnknownBox):
        plan_extraction_physics(obs, "nope")
    with pytest.raises(InvalidInput):
        plan_extraction_physics(obs, "T", k=0)


def test_physics_plan_not_longer_than_safe_heuristic(demo, chain):
    for truth, obs, target in (demo, chain):
        h = plan_extraction_heuristic(obs, target)
        if validate_plan(truth, h).success:
            assert len(plan_extraction_physics(obs, target)) <= len(h)


def test_clearance_column_bottom_first():
    scene = scene_of(cube("A", 0.5), cube("B", 0.5, 0.2), cube("C", 0.5, 0.4))
    plan = plan_clearance_physics(observe_scene(scene), k=3)
    assert plan.box_ids == ["C", "B", "A"]
    assert plan.passes == 3


def test_clearance_side_by_side_one_pass():
    scene = scene_of(cube("A", 0.15), cube("B", 0.45), cube("C", 0.8))
    plan = plan_clearance_physics(observe_scene(scene), k=3)
    assert plan.box_ids == ["A", "B", "C"]
    assert plan.passes == 1


def test_clearance_residue_carries_partial_plan():
    scene = scene_of(cube("A", 0.5), cube("B", 0.5, 0.2), cube("C", 0.5, 0.4))
    # a hair-trigger shift threshold makes every removal count as a disturbance
    with pytest.raises(UnclearableResidue) as info:
        plan_clearance_physics(observe_scene(scene), thresholds=CollapseThresholds(slop=1e-12), k=2)
    assert sorted(info.value.remaining) == ["A", "B", "C"]
    assert info.value.partial_plan.box_ids == []


class _Scripted:
    """Stands in for the sample simulator: per box, a fixed string of S/M/C per sample."""

    def __init__(self, script):
        self.script = script
        self.simulations_run = 0

    @property
    def k(self):
        return len(next(iter(self.script.values())))

    def attempt(self, prefix, box):
        self.simulations_run += self.k
        outs = [RemovalOutcome(box, Classification.COLLAPSE, ("x",), "x") if c == "C" else
                RemovalOutcome(box, Classification.MINOR_SHIFT if c == "M" else
                               Classification.SAFE) for c in self.script[box]]
        return AggregatedOutcome.from_outcomes(outs)


def _scripted_obs(ids):
    return ObservationSet(tuple(MetricBoxObservation(b, (0.15 + 0.25 * i, 0.1), (0.2, 0.2), 0.0,
                                                     0.0) for i, b in enumerate(ids)))


def test_clearance_takes_least_risky_box_when_none_is_safe():
    script = {"A": "MMMSSSSSSS", "B": "CMSSSSSSSS", "C": "MSSSSSSSSS"}
    plan = plan_clearance_physics(_scripted_obs("ABC"), simulator=_Scripted(script))
    # fewest collapses first, then fewest disturbed samples; one box per pass
    assert plan.box_ids == ["C", "A", "B"]
    assert plan.passes == 3


def test_clearance_risk_limit_stops_search():
    script = {"A": "MMMMSSSSSS", "B": "SMMMMSSSSS"}
    with pytest.raises(UnclearableResidue) as info:
        plan_clearance_physics(_scripted_obs("AB"), simulator=_Scripted(script))
    assert sorted(info.value.remaining) == ["A", "B"]
    plan = plan_clearance_physics(_scripted_obs("AB"), simulator=_Scripted(script), max_risk=0.4)
    assert plan.box_ids == ["A", "B"]


def test_ten_box_unstructured_scene_diverges():
    # a 10-box scene on a 2 m bay found by scanning the corpus for diverging outcomes
    spec = CorpusSpec(n_scenes=2, boxes_per_scene=(10, 10), shelf=Shelf(width=2.0),
                      lean_probability=0.15)
    truth, obs = generate_scene(spec, 1)
    assert len(obs.ids) == 10
    physics = validate_plan(truth, plan_clearance_physics(obs))
    heuristic = validate_plan(truth, plan_clearance_heuristic(obs))
    assert physics.success and physics.boxes_removed == 10
    assert not physics.collapsed_during_execution
    assert not heuristic.success and heuristic.collapsed_during_execution


def _obs(*items):
    return ObservationSet(tuple(MetricBoxObservation(i, (x, y), (0.2, 0.2), 0.0, 0.0)
                                for i, x, y in items))


def test_heuristic_highest_target():
    obs = _obs(("a", 0.2, 0.1), ("b", 0.2, 0.3))
    assert plan_extraction_heuristic(obs, "b").box_ids == ["b"]


def test_heuristic_tie_break_left_first():
    obs = _obs(("r", 0.7, 0.1), ("l", 0.3, 0.1))
    assert plan_extraction_heuristic(obs, "r").box_ids == ["l", "r"]


def test_heuristic_demo_removes_four(demo):
    _, obs, target = demo
    assert len(plan_extraction_heuristic(obs, target)) == 4


def test_heuristic_clearance_interleaves_columns():
    obs = _obs(("l1", 0.2, 0.1), ("l2", 0.2, 0.35), ("r1", 0.6, 0.1), ("r2", 0.6, 0.3),
               ("r3", 0.6, 0.5))
    plan = plan_clearance_heuristic(obs)
    assert plan.box_ids == ["r3", "l2", "r2", "l1", "r1"]
    assert len(plan) == 5
    assert all(a.predicted is None for a in plan.actions)


def test_height_order_ties_by_id():
    obs = _obs(("b", 0.5, 0.1), ("a", 0.5, 0.1))
    assert height_order(obs) == ["a", "b"]


def test_validate_empty_plan(two_stack):
    report = validate_plan(two_stack, [])
    assert report.success and report.boxes_removed == 0 and report.estimated_time == 0.0


def test_validate_collapse_stops(two_stack):
    report = validate_plan(two_stack, ["A", "B"])
    assert not report.success
    assert report.boxes_removed == 1
    assert report.collapsed_during_execution == {"B"}
    assert report.estimated_time == pytest.approx(22.0)


def test_validate_cost_model(two_stack):
    report = validate_plan(two_stack, ["B", "A"], SimConfig(per_pick_cost=10.0))
    assert report.success and report.estimated_time == pytest.approx(20.0)


def test_validate_unknown_box(two_stack):
    with pytest.raises(UnknownBox):
        validate_plan(two_stack, ["Q"])


def test_action_plan_invariants():
    with pytest.raises(InvalidInput):
        ActionPlan([PlannedAction("a"), PlannedAction("a")], Approach.HEURISTIC)
    with pytest.raises(InvalidInput):
        ActionPlan([PlannedAction("a"), PlannedAction("b")], Approach.HEURISTIC, "extract", "a")


def test_plan_json_round_trip_omits_timing(demo):
    _, obs, target = demo
    plan = plan_extraction_heuristic(obs, target)
    doc = plan.to_dict()
    assert doc["stats"]["planning_time_s"] is None
    assert ActionPlan.from_dict(doc).box_ids == plan.box_ids
    assert plan.to_dict(include_timing=True)["stats"]["planning_time_s"] is not None


def test_counterexample_physics_passes_heuristic_fails():
    truth, obs, target = load_fixture("counterexample")
    physics = plan_extraction_physics(obs, target)
    heuristic = plan_extraction_heuristic(obs, target)
    assert validate_plan(truth, physics).success
    report = validate_plan(truth, heuristic)
    assert not report.success and report.collapsed_during_execution
