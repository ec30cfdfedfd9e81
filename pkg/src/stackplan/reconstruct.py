"""Real-to-sim: turn front-view box observations into depth-randomized scenes."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .collapse import Classification, RemovalHistory, detect
from .errors import InvalidInput, InvalidScene, UnknownBox, UnsatisfiableObservation
from .physics import SimConfig, World
from .geometry import quat_yaw
from .geometry import convex_hull, polygon_area
from .scene_model import (RigidBox, Scene, Shelf, build_support_graph, has_side_contact,
                          penetration)

SCHEMA_VERSION = 1
# boxes tilted less than this (rad) count as lying flat
FLAT_YAW = 0.035


@dataclass(frozen=True)
class Camera:
    """Pinhole intrinsics plus where the optical axis meets the shelf front plane.

    ``axis_point`` is in shelf coordinates (x, y); it defaults to the center of
    the shelf front when not given.
    """
    fx: float
    fy: float
    cx: float
    cy: float
    shelf_distance: float
    axis_point: Optional[tuple] = None

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidInput("focal lengths must be positive")
        if self.shelf_distance <= 0:
            raise InvalidInput("shelf_distance must be positive")

    def to_dict(self) -> dict:
        out = {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
               "shelf_distance": self.shelf_distance}
        if self.axis_point is not None:
            out["axis_point"] = list(self.axis_point)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        ap = d.get("axis_point")
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   float(d["shelf_distance"]), tuple(float(v) for v in ap) if ap else None)


@dataclass(frozen=True)
class BoxObservation:
    """Pixel-space features of one segmented box."""
    id: str
    rect_center_px: tuple
    rect_size_px: tuple
    rect_angle: float
    centroid_depth: float

    def __post_init__(self):
        if min(self.rect_size_px) <= 0:
            raise InvalidInput(f"box {self.id}: rectangle size must be positive")
        if self.centroid_depth <= 0:
            raise InvalidInput(f"box {self.id}: centroid depth must be positive")

    def to_dict(self) -> dict:
        return {"id": self.id, "rect_center_px": list(self.rect_center_px),
                "rect_size_px": list(self.rect_size_px), "rect_angle": self.rect_angle,
                "centroid_depth": self.centroid_depth}


@dataclass(frozen=True)
class MetricBoxObservation:
    """Already-converted front-plane features: shelf-frame center, size, yaw, front-face z."""
    id: str
    center: tuple
    size: tuple
    yaw: float
    z_front: float

    def __post_init__(self):
        if min(self.size) <= 0:
            raise InvalidInput(f"box {self.id}: size must be positive")

    def to_dict(self) -> dict:
        return {"id": self.id, "center": [round(c, 9) for c in self.center],
                "size": [round(s, 9) for s in self.size], "yaw": round(self.yaw, 9),
                "z_front": round(self.z_front, 9)}


@dataclass(frozen=True)
class FrontRect:
    center: tuple
    size: tuple
    yaw: float


@dataclass(frozen=True)
class ObservationSet:
    boxes: tuple
    shelf: Shelf = Shelf()
    camera: Optional[Camera] = None

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        ids = [b.id for b in self.boxes]
        if len(set(ids)) != len(ids):
            raise InvalidInput("observation ids must be unique")
        if not ids:
            raise InvalidInput("an observation needs at least one box")
        pixel = any(isinstance(b, BoxObservation) for b in self.boxes)
        if pixel and self.camera is None:
            raise InvalidInput("pixel observations need camera intrinsics")

    @property
    def ids(self) -> list:
        return [b.id for b in self.boxes]

    def require(self, box_id) -> None:
        if box_id not in self.ids:
            raise UnknownBox(box_id)

    def metric(self) -> list:
        """Every box as a MetricBoxObservation in shelf coordinates."""
        out = []
        for b in self.boxes:
            if isinstance(b, MetricBoxObservation):
                out.append(b)
                continue
            rect = pixel_to_metric(b, self.camera)
            ax, ay = self.camera.axis_point or (self.shelf.width / 2, self.shelf.height / 2)
            z_front = max(0.0, b.centroid_depth - self.camera.shelf_distance)
            out.append(MetricBoxObservation(b.id, (ax + rect.center[0], ay + rect.center[1]),
                                            rect.size, rect.yaw, z_front))
        return out

    def to_dict(self) -> dict:
        out = {"schema_version": SCHEMA_VERSION, "kind": "observation",
               "shelf": self.shelf.to_dict()}
        if self.camera is not None:
            out["camera"] = self.camera.to_dict()
        out["boxes"] = [b.to_dict() for b in self.boxes]
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ObservationSet":
        shelf = Shelf.from_dict(d.get("shelf", {}))
        camera = Camera.from_dict(d["camera"]) if d.get("camera") else None
        boxes = []
        for b in d["boxes"]:
            if "rect_center_px" in b:
                boxes.append(BoxObservation(str(b["id"]), tuple(b["rect_center_px"]),
                                            tuple(b["rect_size_px"]), float(b["rect_angle"]),
                                            float(b["centroid_depth"])))
            else:
                boxes.append(MetricBoxObservation(str(b["id"]), tuple(b["center"]),
                                                  tuple(b["size"]), float(b.get("yaw", 0.0)),
                                                  float(b.get("z_front", 0.0))))
        return cls(tuple(boxes), shelf, camera)


@dataclass(frozen=True)
class SceneSample:
    scene: Scene
    sample_seed: int
    depth_assignment: dict = field(default_factory=dict)


def pixel_to_metric(obs: BoxObservation, camera: Camera) -> FrontRect:
    """Back-project a pixel rectangle onto the plane at the box's measured depth.

    The returned center is relative to the optical axis with y pointing up
    (image rows grow downward).
    """
    d = obs.centroid_depth
    u, v = obs.rect_center_px
    w, h = obs.rect_size_px
    center = ((u - camera.cx) * d / camera.fx, -(v - camera.cy) * d / camera.fy)
    size = (w * d / camera.fx, h * d / camera.fy)
    return FrontRect(center, size, float(obs.rect_angle))


def derive_seed(base_seed: int, index: int) -> int:
    ss = np.random.SeedSequence([int(base_seed) & 0xFFFFFFFFFFFFFFFF, int(index)])
    return int(ss.generate_state(2, np.uint64)[0])


def _may_overlap(a: MetricBoxObservation, b: MetricBoxObservation) -> bool:
    """Cheap bounding-circle test on the front rectangles."""
    ra = 0.5 * float(np.hypot(*a.size))
    rb = 0.5 * float(np.hypot(*b.size))
    if np.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1]) >= ra + rb:
        return False
    return True


def _place(m: MetricBoxObservation, depth: float) -> RigidBox:
    half = (0.5 * m.size[0], 0.5 * m.size[1], 0.5 * depth)
    return RigidBox(m.id, half, (m.center[0], m.center[1], m.z_front + 0.5 * depth), yaw=m.yaw)


def _resolve_overlaps(metric, depths: dict, cfg: SimConfig) -> Optional[dict]:
    """Shrink the depth of the front box of every interpenetrating pair."""
    depths = dict(depths)
    for _ in range(len(metric) + 1):
        changed = False
        boxes = {m.id: _place(m, depths[m.id]) for m in metric}
        for i, a in enumerate(metric):
            for b in metric[i + 1:]:
                if not _may_overlap(a, b):
                    continue
                if penetration(boxes[a.id], boxes[b.id]) <= cfg.contact_slop:
                    continue
                front, back = (a, b) if a.z_front < b.z_front else (b, a)
                room = back.z_front - front.z_front
                if room < cfg.depth_min:
                    return None
                if depths[front.id] > room:
                    depths[front.id] = room
                    boxes[front.id] = _place(front, room)
                    changed = True
                    if penetration(boxes[a.id], boxes[b.id]) > cfg.contact_slop:
                        return None
        if not changed:
            return depths
    return None


def rests_over_support(scene: Scene, slop: float) -> bool:
    """Every box lying flat on others has its centroid over that support.

    Tilted boxes, boxes touching their supporters only along an edge or at a
    corner, and boxes braced against a wall or a neighbour's side are exempt;
    they are held by side contacts instead.
    """
    graph = build_support_graph(scene, slop, margin=0.0)
    for b in scene.active():
        if abs(quat_yaw(b.quat)) > FLAT_YAW:
            continue
        edges = graph.supporters_of(b.id)
        if not edges:
            continue
        hull = convex_hull(np.vstack([e.footprint for e in edges]))
        if polygon_area(hull) < 1e-6:
            continue
        if not edges[0].centroid_supported and not has_side_contact(scene, b.id, slop):
            return False
    return True


def _rest_level(scene: Scene, cfg: SimConfig, seed: int) -> int:
    """0: moves when settled; 1: settles; 2: also survives disturbances alone."""
    world = World(scene, cfg)
    moved = world.settle(cfg.settle_time, rest_exit=cfg.rest_exit)
    if max(moved.values(), default=0.0) > cfg.sample_stability_tolerance:
        return 0
    if min(cfg.sample_vibration_time, cfg.sample_vibration_trials,
           cfg.disturbance_force_std) <= 0:
        return 2
    # the observed stack survived ambient vibration; so must the hypothesis
    rest = world.snapshot()
    for trial in range(cfg.sample_vibration_trials):
        world.restore(rest)
        world.reseed(derive_seed(seed, trial))
        start = world.box_positions()
        _, _, trace = world.advance(cfg.steps_for(cfg.sample_vibration_time), disturb=True,
                                    record=True)
        history = RemovalHistory(list(world.ids), "", np.ones(world.n_boxes, bool), start,
                                 trace, len(trace))
        if detect(history).classification == Classification.COLLAPSE:
            return 1
    return 2


def settles_in_place(scene: Scene, cfg: SimConfig, seed: int) -> bool:
    """The scene stays put when settled and survives disturbances alone."""
    return _rest_level(scene, cfg, seed) == 2


def sample_scene(obs: ObservationSet, cfg: Optional[SimConfig] = None, seed: int = 0,
                 check_stability: bool = True) -> SceneSample:
    """One depth-randomized hypothesis of the observed scene.

    Depths are uniform in [depth_min, shelf depth - z_front].  Draws whose
    boxes interpenetrate after depth shrinking are redrawn, up to
    ``cfg.sample_retries`` times.  With ``check_stability`` draws are also
    redrawn when a flat-lying box overhangs its support, when the scene moves
    as it settles, or when it collapses under disturbances alone (the
    observed scene is at rest and survived ambient vibration).  These are
    preferences: if no draw meets them all, the first draw meeting the most
    of them, in that order, is returned.
    """
    cfg = cfg or SimConfig()
    metric = obs.metric()
    D = obs.shelf.depth
    rng = np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))
    last_reason = "no attempt"
    best, best_level = None, -1
    for _ in range(cfg.sample_retries):
        depths = {}
        for m in metric:
            hi = D - m.z_front
            if hi < cfg.depth_min:
                raise UnsatisfiableObservation(
                    f"box {m.id}: front face at z={m.z_front:.3f} leaves less than "
                    f"depth_min={cfg.depth_min} m of shelf depth")
            depths[m.id] = float(rng.uniform(cfg.depth_min, hi))
        resolved = _resolve_overlaps(metric, depths, cfg)
        if resolved is None:
            last_reason = "interpenetration could not be resolved by shrinking depths"
            continue
        scene = Scene(obs.shelf, tuple(_place(m, resolved[m.id]) for m in metric))
        try:
            scene.validate(cfg.contact_slop)
        except InvalidScene as exc:
            last_reason = str(exc)
            continue
        sample = SceneSample(scene, int(seed), resolved)
        if not check_stability:
            return sample
        level = 0
        if rests_over_support(scene, cfg.contact_slop):
            level = 1 + _rest_level(scene, cfg, int(rng.integers(2 ** 63)))
        if level == 3:
            return sample
        if level > best_level:
            best, best_level = sample, level
    if best is not None:
        return best
    raise UnsatisfiableObservation(f"no valid sample after {cfg.sample_retries} draws: "
                                   f"{last_reason}")


def sample_batch(obs: ObservationSet, cfg: Optional[SimConfig] = None, base_seed: int = 0,
                 k: int = 10, check_stability: bool = True) -> list:
    if k < 1:
        raise InvalidInput("k must be at least 1")
    out = []
    for i in range(k):
        try:
            out.append(sample_scene(obs, cfg, derive_seed(base_seed, i), check_stability))
        except UnsatisfiableObservation as exc:
            raise UnsatisfiableObservation(str(exc), sample_index=i) from exc
    return out


def observe_scene(scene: Scene) -> ObservationSet:
    """Front-view metric observation of a ground-truth scene (what a perfect camera reports)."""
    boxes = []
    for b in scene.active():
        v = b.vertices()
        boxes.append(MetricBoxObservation(b.id, (b.position[0], b.position[1]),
                                          (2 * b.half_extents[0], 2 * b.half_extents[1]),
                                          float(quat_yaw(b.quat)), max(0.0, float(v[:, 2].min()))))
    return ObservationSet(tuple(boxes), scene.shelf)
