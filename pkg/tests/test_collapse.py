import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import cube, scene_of
from stackplan.collapse import (AggregatedOutcome, Classification, CollapseThresholds,
                                RemovalHistory, RemovalOutcome, detect, removal_seed,
                                simulate_removal, simulate_removal_mc)
from stackplan.errors import InsufficientHistory, InvalidInput, UnknownBox
from stackplan.physics import SimConfig, Trace
from stackplan.reconstruct import observe_scene, sample_batch
from stackplan.scene_model import static_collapse_oracle

SAFE, SHIFT, COLLAPSE = Classification.SAFE, Classification.MINOR_SHIFT, Classification.COLLAPSE


def _history(paths, driven="d"):
    """History of boxes 'd' (driven) and the given ids following ``paths`` (T x 3 each)."""
    ids = [driven] + list(paths)
    steps = len(next(iter(paths.values())))
    pos = np.zeros((steps, len(ids), 3))
    for i, bid in enumerate(ids[1:], 1):
        pos[:, i] = paths[bid]
    dt = 1 / 240
    vel = np.vstack([np.zeros((1, len(ids), 3)), np.diff(pos, axis=0) / dt])
    trace = Trace(np.linalg.norm(vel, axis=2), np.zeros((steps, len(ids))), pos)
    return RemovalHistory(ids, driven, np.ones(len(ids), bool), pos[0].copy(), trace, steps)


def test_thresholds_defaults_and_validation():
    t = CollapseThresholds()
    assert (t.linear_speed, t.angular_speed, t.displacement, t.sustain_steps) == (0.1, 0.5, 0.02, 12)
    with pytest.raises(InvalidInput):
        CollapseThresholds(linear_speed=0.0)


def test_detect_stationary_is_safe():
    out = detect(_history({"a": np.zeros((100, 3))}))
    assert out.classification == SAFE and out.collapsed_boxes == ()


def test_detect_slow_slide_is_minor_shift():
    # slides 0.015 m over half a second (0.03 m/s) then rests
    x = np.concatenate([np.linspace(0, 0.015, 120), np.full(240, 0.015)])
    out = detect(_history({"a": np.stack([x, 0 * x, 0 * x], 1)}))
    assert out.classification == SHIFT
    assert out.max_displacement["a"] == pytest.approx(0.015)


def test_detect_far_slide_is_collapse():
    x = np.concatenate([np.linspace(0, 0.05, 240), np.full(120, 0.05)])
    out = detect(_history({"a": np.stack([x, 0 * x, 0 * x], 1)}))
    assert out.classification == COLLAPSE and out.collapsed_boxes == ("a",)


def test_detect_speed_spike_filtered_by_sustain():
    x = np.zeros(200)
    x[50] = 0.01  # a one-step excursion: large speed for two steps only
    out = detect(_history({"a": np.stack([x, 0 * x, 0 * x], 1)}))
    assert out.classification != COLLAPSE


def test_detect_orders_collapses_chronologically():
    t = np.arange(300)
    late = np.stack([np.clip(t - 150, 0, None) * 0.001, 0 * t, 0 * t], 1)
    early = np.stack([np.clip(t - 20, 0, None) * 0.001, 0 * t, 0 * t], 1)
    out = detect(_history({"late": late, "early": early}))
    assert out.collapsed_boxes == ("early", "late")
    assert out.first_collapsed == "early"


def test_detect_ignores_driven_box():
    hist = _history({"a": np.zeros((50, 3))})
    hist.trace.positions[:, 0, 2] = -np.linspace(0, 1, 50)
    out = detect(hist)
    assert "d" not in out.collapsed_boxes and "d" not in out.max_displacement


def test_detect_insufficient_history():
    hist = _history({"a": np.zeros((10, 3))})
    hist.required_steps = 100
    with pytest.raises(InsufficientHistory):
        detect(hist)


def test_outcome_invariants():
    with pytest.raises(InvalidInput):
        RemovalOutcome("a", COLLAPSE, ())
    with pytest.raises(InvalidInput):
        RemovalOutcome("a", COLLAPSE, ("b", "c"), "c")
    o = RemovalOutcome("a", COLLAPSE, ("b",), "b", {"b": 0.1})
    assert RemovalOutcome.from_dict(o.to_dict()) == o


def test_simulate_lone_box_safe():
    assert simulate_removal(scene_of(cube("a", 0.5)), "a").classification == SAFE


def test_simulate_bottom_of_two_stack(two_stack):
    out = simulate_removal(two_stack, "A")
    assert out.classification == COLLAPSE
    assert set(out.collapsed_boxes) == static_collapse_oracle(two_stack, "A") == {"B"}


def test_simulate_top_of_two_stack_safe(two_stack):
    assert simulate_removal(two_stack, "B").classification == SAFE


def test_simulate_supporting_box_beside_neighbour():
    # B1 and B2 side by side, U resting on B2: pulling B2 drops U, B1 stays
    scene = scene_of(cube("B1", 0.3), cube("B2", 0.52), cube("U", 0.52, 0.2))
    out = simulate_removal(scene, "B2")
    assert out.classification == COLLAPSE
    assert "U" in out.collapsed_boxes and "B1" not in out.collapsed_boxes


def test_simulate_is_repeatable_and_pure(three_stack):
    before = three_stack.to_dict()
    a = simulate_removal(three_stack, "B")
    b = simulate_removal(three_stack, "B")
    assert a == b
    assert three_stack.to_dict() == before


def test_simulate_unknown_box(two_stack):
    with pytest.raises(UnknownBox):
        simulate_removal(two_stack, "zz")


def test_mc_two_stack_all_collapse(two_stack):
    samples = sample_batch(observe_scene(two_stack), base_seed=1)
    agg = simulate_removal_mc(samples, "A")
    assert len(agg.per_sample) == 10
    assert all(o.classification == COLLAPSE for o in agg.per_sample)
    assert agg.first_collapsed_mode == "B"
    assert not agg.safe


def test_mc_needs_samples():
    with pytest.raises(InvalidInput):
        simulate_removal_mc([], "a")


def _o(cls, collapsed=()):
    collapsed = tuple(collapsed)
    return RemovalOutcome("t", cls, collapsed, collapsed[0] if collapsed else None)


def test_aggregate_all_safe():
    agg = AggregatedOutcome.from_outcomes([_o(SAFE)] * 10)
    assert agg.safe and agg.collapse_union == frozenset() and agg.first_collapsed_mode is None


def test_aggregate_one_collapse():
    agg = AggregatedOutcome.from_outcomes([_o(SAFE)] * 9 + [_o(COLLAPSE, ["x", "y"])])
    assert not agg.safe
    assert agg.collapse_union == {"x", "y"}
    assert agg.collapse_count == 1


def test_aggregate_mode_and_ranking():
    outs = [_o(COLLAPSE, ["b", "a"]), _o(COLLAPSE, ["a"]), _o(COLLAPSE, ["a", "c"]),
            _o(COLLAPSE, ["c", "b"]), _o(SAFE)]
    agg = AggregatedOutcome.from_outcomes(outs)
    assert agg.first_collapsed_mode == "a"
    assert agg.ranked_collapsed() == ["a", "b", "c"]


outcomes = st.lists(st.sampled_from([SAFE, SHIFT, COLLAPSE]), min_size=1, max_size=20).map(
    lambda cs: [_o(c, ["x"] if c == COLLAPSE else []) for c in cs])


@given(outcomes)
def test_aggregate_safe_iff_all_safe(outs):
    agg = AggregatedOutcome.from_outcomes(outs)
    assert agg.safe == all(o.classification == SAFE for o in outs)
    if any(o.classification == COLLAPSE for o in outs):
        assert not agg.safe


@given(outcomes, st.sampled_from([SAFE, SHIFT, COLLAPSE]))
def test_aggregate_monotone_when_adding_samples(outs, extra):
    before = AggregatedOutcome.from_outcomes(outs).safe
    after = AggregatedOutcome.from_outcomes(outs + [_o(extra, ["x"] if extra == COLLAPSE else [])]).safe
    assert after <= before


def test_removal_seed_depends_on_sequence():
    assert removal_seed(0, ["a"], "b") == removal_seed(0, ["a"], "b")
    assert removal_seed(0, ["a"], "b") != removal_seed(0, [], "b")
    assert removal_seed(0, ["a", "c"], "b") != removal_seed(0, ["c", "a"], "b")
