import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import cube, scene_of
from stackplan.errors import InvalidInput, UnsatisfiableObservation
from stackplan.physics import SimConfig
from stackplan.reconstruct import (BoxObservation, Camera, MetricBoxObservation,
                                   ObservationSet, derive_seed, observe_scene, pixel_to_metric,
                                   sample_batch, sample_scene)
from stackplan.scene_model import Shelf

CAM = Camera(500.0, 500.0, 320.0, 240.0, 1.04)


def _px(size, depth, center=(320.0, 240.0)):
    return BoxObservation("a", center, size, 0.0, depth)


def test_pixel_to_metric_similar_triangles():
    r = pixel_to_metric(_px((100, 100), 1.0), CAM)
    assert r.size == pytest.approx((0.2, 0.2))


def test_pixel_to_metric_experimental_face():
    r = pixel_to_metric(_px((155, 125), 1.04), CAM)
    assert r.size == pytest.approx((0.3224, 0.26), abs=1e-9)
    assert r.size[0] == pytest.approx(0.31, rel=0.05)
    assert r.size[1] == pytest.approx(0.25, rel=0.05)


@given(st.floats(0.1, 5.0))
def test_pixel_to_metric_principal_point_is_origin(depth):
    assert pixel_to_metric(_px((80, 60), depth), CAM).center == pytest.approx((0.0, 0.0))


@given(st.floats(0.1, 3.0), st.floats(10, 300), st.floats(10, 300))
def test_pixel_to_metric_scales_with_depth(depth, w, h):
    a = pixel_to_metric(_px((w, h), depth, (400.0, 100.0)), CAM)
    b = pixel_to_metric(_px((w, h), 2 * depth, (400.0, 100.0)), CAM)
    assert b.size == pytest.approx(tuple(2 * s for s in a.size), rel=1e-12)
    assert b.center == pytest.approx(tuple(2 * c for c in a.center), rel=1e-12)


def test_pixel_observation_needs_camera():
    with pytest.raises(InvalidInput):
        ObservationSet((_px((10, 10), 1.0),))


def test_pixel_observation_front_face_from_depth():
    obs = ObservationSet((BoxObservation("a", (320.0, 240.0), (100, 100), 0.0, 1.09),), Shelf(),
                         CAM)
    m = obs.metric()[0]
    assert m.z_front == pytest.approx(0.05)
    assert m.center == pytest.approx((0.5, 0.8))


def _single(z_front=0.05):
    return ObservationSet((MetricBoxObservation("a", (0.5, 0.1), (0.2, 0.2), 0.0, z_front),))


def test_sample_deterministic():
    obs = observe_scene(scene_of(cube("A", 0.5), cube("B", 0.5, 0.2), cube("C", 0.8)))
    a, b = sample_scene(obs, seed=11), sample_scene(obs, seed=11)
    assert a.scene.to_dict() == b.scene.to_dict()
    assert a.depth_assignment == b.depth_assignment


def test_sample_depth_bounded_over_many_seeds():
    cfg = SimConfig()
    obs = _single(0.05)
    rng = np.random.default_rng(1)
    for seed in rng.integers(0, 2 ** 62, 1000):
        d = sample_scene(obs, cfg, int(seed), check_stability=False).depth_assignment["a"]
        assert cfg.depth_min <= d <= 0.25 + 1e-12


def test_batch_default_k_and_depths_differ():
    batch = sample_batch(_single(), check_stability=False)
    assert len(batch) == 10
    assert len({s.depth_assignment["a"] for s in batch}) > 1


def test_batch_k1_matches_sample_scene():
    obs = _single()
    (one,) = sample_batch(obs, base_seed=5, k=1)
    ref = sample_scene(obs, seed=derive_seed(5, 0))
    assert one.scene.to_dict() == ref.scene.to_dict()


def test_batch_repeatable():
    obs = observe_scene(scene_of(cube("A", 0.5), cube("B", 0.5, 0.2)))
    a = [s.scene.to_dict() for s in sample_batch(obs, base_seed=3, k=3)]
    b = [s.scene.to_dict() for s in sample_batch(obs, base_seed=3, k=3)]
    assert a == b


def test_batch_rejects_k0():
    with pytest.raises(InvalidInput):
        sample_batch(_single(), k=0)


def test_unsatisfiable_reports_index():
    obs = _single(0.28)
    with pytest.raises(UnsatisfiableObservation) as info:
        sample_batch(obs, k=3)
    assert info.value.sample_index == 0


@given(st.integers(0, 2 ** 40))
def test_samples_keep_observed_faces_and_stay_valid(seed):
    # a row of boxes at different front depths, one stacked
    truth = scene_of(cube("A", 0.2, z_front=0.0), cube("B", 0.42, z_front=0.06),
                     cube("C", 0.2, 0.2, z_front=0.03))
    obs = observe_scene(truth)
    s = sample_scene(obs, seed=seed, check_stability=False)
    s.scene.validate(SimConfig().contact_slop)
    for m in obs.metric():
        b = s.scene.get(m.id)
        assert b.position[:2] == pytest.approx(m.center)
        assert b.size[:2] == pytest.approx(m.size)
        assert b.position[2] - b.half_extents[2] == pytest.approx(m.z_front)


def test_front_box_shrinks_when_a_box_sits_behind_it():
    # two boxes sharing the same front rectangle: the front one must end before the back one
    obs = ObservationSet((MetricBoxObservation("f", (0.5, 0.1), (0.2, 0.2), 0.0, 0.0),
                          MetricBoxObservation("b", (0.5, 0.1), (0.2, 0.2), 0.0, 0.12)))
    for seed in range(20):
        s = sample_scene(obs, seed=seed, check_stability=False)
        assert s.depth_assignment["f"] <= 0.12 + 1e-12
        assert s.scene.get("f").size[:2] == pytest.approx((0.2, 0.2))


def test_observe_scene_reports_front_faces():
    obs = observe_scene(scene_of(cube("A", 0.5, z_front=0.04)))
    (m,) = obs.metric()
    assert m.z_front == pytest.approx(0.04)
    assert m.size == pytest.approx((0.2, 0.2))


def test_observation_json_round_trip():
    obs = ObservationSet((BoxObservation("a", (300.0, 200.0), (100, 80), 0.1, 1.1),), Shelf(), CAM)
    again = ObservationSet.from_dict(obs.to_dict())
    assert again.to_dict() == obs.to_dict()
