"""Scene representation, box contact geometry and the static support oracle.

Frame: x to the right, y up, z from the shelf front plane toward the back
wall; the origin sits at the front-bottom-left interior corner of the bay.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from . import _kernels as K
from .errors import DegenerateGeometry, InvalidScene, UnknownBox
from .geometry import convex_hull, inside_with_margin, polygon_area, quat_matrix, quat_yaw, yaw_quat

FLOOR_ID = "__floor__"
DEFAULT_SLOP = 0.002
HULL_MARGIN = 0.005
# contacts whose normal points upward at least this much count as support
SUPPORT_NORMAL_MIN = 0.1
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Shelf:
    width: float = 1.00
    height: float = 1.60
    depth: float = 0.30
    wall_thickness: float = 0.02
    has_side_walls: bool = True

    def __post_init__(self):
        if min(self.width, self.height, self.depth, self.wall_thickness) <= 0:
            raise InvalidScene("shelf dimensions must be positive")

    def to_dict(self) -> dict:
        return {"w": self.width, "h": self.height, "d": self.depth,
                "wall_thickness": self.wall_thickness, "side_walls": self.has_side_walls}

    @classmethod
    def from_dict(cls, data: dict) -> "Shelf":
        return cls(width=float(data.get("w", 1.0)), height=float(data.get("h", 1.6)),
                   depth=float(data.get("d", 0.3)),
                   wall_thickness=float(data.get("wall_thickness", 0.02)),
                   has_side_walls=bool(data.get("side_walls", True)))


def _vec3(values) -> tuple:
    out = tuple(float(v) for v in values)
    if len(out) != 3:
        raise InvalidScene(f"expected a 3-vector, got {values!r}")
    return out


@dataclass(frozen=True)
class RigidBox:
    """One cardboard box.

    ``yaw`` is the in-plane tilt seen by the camera.  ``orientation`` holds a
    full quaternion when the box came out of a simulation and may carry small
    out-of-plane components; when absent the orientation is the pure yaw.
    """

    id: str
    half_extents: tuple
    position: tuple
    yaw: float = 0.0
    linear_velocity: tuple = (0.0, 0.0, 0.0)
    angular_velocity: tuple = (0.0, 0.0, 0.0)
    removed: bool = False
    orientation: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "half_extents", _vec3(self.half_extents))
        object.__setattr__(self, "position", _vec3(self.position))
        object.__setattr__(self, "linear_velocity", _vec3(self.linear_velocity))
        object.__setattr__(self, "angular_velocity", _vec3(self.angular_velocity))
        object.__setattr__(self, "yaw", float(self.yaw))
        if self.orientation is not None:
            q = np.asarray(self.orientation, dtype=float)
            object.__setattr__(self, "orientation", tuple(float(c) for c in q / np.linalg.norm(q)))

    @property
    def quat(self) -> np.ndarray:
        if self.orientation is not None:
            return np.array(self.orientation)
        return yaw_quat(self.yaw)

    @property
    def rotation(self) -> np.ndarray:
        return quat_matrix(self.quat)

    def mass(self, density: float) -> float:
        hx, hy, hz = self.half_extents
        return density * 8.0 * hx * hy * hz

    @property
    def size(self) -> tuple:
        return tuple(2.0 * h for h in self.half_extents)

    def vertices(self) -> np.ndarray:
        from .geometry import box_vertices
        return box_vertices(self.position, self.rotation, self.half_extents)

    def to_dict(self) -> dict:
        out = {"id": self.id, "half_extents": list(self.half_extents),
               "position": list(self.position), "yaw": self.yaw}
        if self.orientation is not None:
            out["orientation"] = list(self.orientation)
        if self.removed:
            out["removed"] = True
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RigidBox":
        return cls(id=data["id"], half_extents=data["half_extents"], position=data["position"],
                   yaw=float(data.get("yaw", 0.0)), removed=bool(data.get("removed", False)),
                   orientation=data.get("orientation"))


@dataclass(frozen=True)
class Scene:
    shelf: Shelf
    boxes: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        ids = [b.id for b in self.boxes]
        if len(set(ids)) != len(ids):
            raise InvalidScene("box ids must be unique")

    @property
    def ids(self) -> list:
        return [b.id for b in self.boxes]

    def get(self, box_id) -> RigidBox:
        for b in self.boxes:
            if b.id == box_id:
                return b
        raise UnknownBox(box_id)

    def index(self, box_id) -> int:
        for i, b in enumerate(self.boxes):
            if b.id == box_id:
                return i
        raise UnknownBox(box_id)

    def active(self) -> list:
        return [b for b in self.boxes if not b.removed]

    def without(self, box_id) -> "Scene":
        self.get(box_id)
        return Scene(self.shelf, tuple(b for b in self.boxes if b.id != box_id))

    def with_box(self, box: RigidBox) -> "Scene":
        return Scene(self.shelf, self.boxes + (box,))

    def validate(self, slop: float = DEFAULT_SLOP) -> "Scene":
        """Raise InvalidScene unless containment and non-penetration hold."""
        s = self.shelf
        limits = (s.width / 2, s.height / 2, s.depth / 2)
        boxes = self.active()
        for b in boxes:
            if min(b.half_extents) <= 0:
                raise InvalidScene(f"box {b.id}: half extents must be positive")
            if any(h > lim + 1e-12 for h, lim in zip(b.half_extents, limits)):
                raise InvalidScene(f"box {b.id}: larger than the shelf interior")
            v = b.vertices()
            lo = v.min(axis=0)
            hi = v.max(axis=0)
            if (lo < -slop).any() or hi[0] > s.width + slop or hi[1] > s.height + slop \
                    or hi[2] > s.depth + slop:
                raise InvalidScene(f"box {b.id}: outside the shelf interior")
        for i, a in enumerate(boxes):
            for b in boxes[i + 1:]:
                if penetration(a, b) > slop:
                    raise InvalidScene(f"boxes {a.id} and {b.id} interpenetrate")
        return self

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "kind": "scene",
                "shelf": self.shelf.to_dict(), "boxes": [b.to_dict() for b in self.boxes]}

    @classmethod
    def from_dict(cls, data: dict) -> "Scene":
        return cls(Shelf.from_dict(data.get("shelf", {})),
                   tuple(RigidBox.from_dict(b) for b in data["boxes"]))


@dataclass(frozen=True)
class ContactPoint:
    position: tuple
    penetration: float


@dataclass(frozen=True)
class ContactManifold:
    box_a: str
    box_b: str
    points: tuple
    normal: tuple

    def flipped(self) -> "ContactManifold":
        return ContactManifold(self.box_b, self.box_a, self.points,
                               tuple(-c for c in self.normal))


@dataclass(frozen=True)
class SupportEdge:
    supporter: str
    supported: str
    overlap_area: float
    centroid_supported: bool
    footprint: np.ndarray = field(repr=False, compare=False)


@dataclass
class SupportGraph:
    nodes: list
    edges: list

    def supporters_of(self, box_id) -> list:
        return [e for e in self.edges if e.supported == box_id]

    def supported_by(self, box_id) -> list:
        return [e for e in self.edges if e.supporter == box_id]

    def edge(self, supporter, supported) -> Optional[SupportEdge]:
        for e in self.edges:
            if e.supporter == supporter and e.supported == supported:
                return e
        return None


def shelf_colliders(shelf: Shelf) -> list:
    """Static slabs bounding the bay: (id, center, half extents)."""
    W, H, D, t = shelf.width, shelf.height, shelf.depth, shelf.wall_thickness
    out = [
        (FLOOR_ID, (W / 2, -t / 2, D / 2), (W / 2 + t, t / 2, D / 2)),
        ("__back__", (W / 2, H / 2, D + t / 2), (W / 2 + t, H / 2 + t, t / 2)),
        ("__ceiling__", (W / 2, H + t / 2, D / 2), (W / 2 + t, t / 2, D / 2)),
    ]
    if shelf.has_side_walls:
        out.append(("__left__", (-t / 2, H / 2, D / 2), (t / 2, H / 2 + t, D / 2)))
        out.append(("__right__", (W + t / 2, H / 2, D / 2), (t / 2, H / 2 + t, D / 2)))
    return out


def floor_box(shelf: Shelf) -> RigidBox:
    _, c, h = shelf_colliders(shelf)[0]
    return RigidBox(FLOOR_ID, h, c)


def _check_degenerate(box: RigidBox):
    if min(box.half_extents) < 1e-6:
        raise DegenerateGeometry(f"box {box.id} has a half extent below 1e-6 m")


def _raw_contact(a: RigidBox, b: RigidBox, slop: float):
    pts = np.empty((K.MAX_RAW_POINTS, 3))
    seps = np.empty(K.MAX_RAW_POINTS)
    normal = np.empty(3)
    n = K.box_box(np.array(a.position), a.rotation, np.array(a.half_extents),
                  np.array(b.position), b.rotation, np.array(b.half_extents),
                  float(slop), pts, seps, normal)
    return pts[:n].copy(), seps[:n].copy(), normal


def penetration(a: RigidBox, b: RigidBox) -> float:
    """Overlap depth along the axis of least overlap (<= 0 when apart)."""
    return -float(K.sat_separation(np.array(a.position), a.rotation, np.array(a.half_extents),
                                   np.array(b.position), b.rotation, np.array(b.half_extents)))


def obb_contact(a: RigidBox, b: RigidBox, slop: float = DEFAULT_SLOP) -> Optional[ContactManifold]:
    """Contact manifold between two boxes, or None when a separating axis wider than slop exists."""
    if a.removed or b.removed:
        raise InvalidScene("removed boxes take no part in contact generation")
    _check_degenerate(a)
    _check_degenerate(b)
    if b.id < a.id:
        m = obb_contact(b, a, slop)
        return None if m is None else m.flipped()
    pts, seps, normal = _raw_contact(a, b, slop)
    if len(pts) == 0:
        return None
    keep = np.empty(4, dtype=np.int64)
    m = K.reduce_points(pts, seps, len(pts), normal, keep)
    points = tuple(ContactPoint(tuple(float(c) for c in pts[k]), max(0.0, -float(seps[k])))
                   for k in keep[:m])
    n = normal / np.linalg.norm(normal)
    return ContactManifold(a.id, b.id, points, tuple(float(c) for c in n))


def _support_region(lower: RigidBox, upper: RigidBox, slop: float):
    """Horizontal (x, z) contact points if ``lower`` holds ``upper`` up, else None."""
    pts, seps, normal = _raw_contact(lower, upper, slop)
    if len(pts) == 0 or normal[1] < SUPPORT_NORMAL_MIN:
        return None
    return pts[:, [0, 2]]


def _touching(a: RigidBox, b: RigidBox, slop: float) -> bool:
    pts, _, _ = _raw_contact(a, b, slop)
    return len(pts) > 0


def build_support_graph(scene: Scene, slop: float = DEFAULT_SLOP,
                        margin: float = HULL_MARGIN) -> SupportGraph:
    """Directed supporter -> supported relation from contact geometry.

    An edge exists when the two boxes touch within ``slop`` and the contact
    normal has an upward component; its area is the horizontal extent of the
    clipped contact region.  The floor is the node ``FLOOR_ID``.
    """
    boxes = scene.active()
    for b in boxes:
        _check_degenerate(b)
    floor = floor_box(scene.shelf)
    raw = []
    for v in boxes:
        region = _support_region(floor, v, slop)
        if region is not None:
            raw.append((FLOOR_ID, v.id, region))
        for u in boxes:
            if u.id == v.id:
                continue
            if u.position[1] >= v.position[1] + max(u.half_extents):
                continue
            region = _support_region(u, v, slop)
            if region is not None:
                raw.append((u.id, v.id, region))
    by_supported: dict = {}
    for u, v, region in raw:
        by_supported.setdefault(v, []).append(region)
    centered = {}
    for v in boxes:
        regions = by_supported.get(v.id, [])
        if regions:
            hull = convex_hull(np.vstack(regions))
            centered[v.id] = inside_with_margin((v.position[0], v.position[2]), hull, margin)
        else:
            centered[v.id] = False
    edges = []
    for u, v, region in raw:
        area = polygon_area(convex_hull(region))
        edges.append(SupportEdge(u, v, area, centered[v], region))
    return SupportGraph([FLOOR_ID] + [b.id for b in boxes], edges)


def has_side_contact(scene: Scene, box_id, slop: float = DEFAULT_SLOP) -> bool:
    """Whether the box touches a wall or another box through a near-vertical face."""
    box = scene.get(box_id)
    others = [o for o in scene.active() if o.id != box.id]
    others += [RigidBox(cid, h, c) for cid, c, h in shelf_colliders(scene.shelf)
               if cid not in (FLOOR_ID, "__ceiling__")]
    for o in others:
        pts, _, normal = _raw_contact(box, o, slop)
        if len(pts) and abs(normal[1]) < SUPPORT_NORMAL_MIN * np.linalg.norm(normal):
            return True
    return False


def static_collapse_oracle(scene: Scene, removed, slop: float = DEFAULT_SLOP,
                           margin: float = HULL_MARGIN, graph: Optional[SupportGraph] = None) -> set:
    """Boxes that lose support, transitively, once ``removed`` is taken out.

    A box stays up while its centroid (x, z) lies inside the hull of the
    contact footprints of its remaining supporters, ``margin`` inside the
    edges.  Boxes that are not supported this way in the intact scene (held
    by side contact only) are treated as braced by every box they touch and
    fall as soon as one of those goes.
    """
    scene.get(removed)
    if graph is None:
        graph = build_support_graph(scene, slop, margin)
    boxes = [b for b in scene.active()]
    braced = {b.id for b in boxes if not _supported(b, graph, set(), margin)}
    touching = {}
    for b in boxes:
        if b.id in braced:
            touching[b.id] = {o.id for o in boxes if o.id != b.id and _touching(b, o, slop)}
    gone = {removed}
    collapsed: set = set()
    changed = True
    while changed:
        changed = False
        for b in boxes:
            if b.id in gone:
                continue
            if b.id in braced:
                fall = bool(touching[b.id] & gone)
            else:
                fall = not _supported(b, graph, gone, margin)
            if fall:
                gone.add(b.id)
                collapsed.add(b.id)
                changed = True
    return collapsed


def _supported(box: RigidBox, graph: SupportGraph, gone: set, margin: float) -> bool:
    regions = [e.footprint for e in graph.supporters_of(box.id) if e.supporter not in gone]
    if not regions:
        return False
    hull = convex_hull(np.vstack(regions))
    return inside_with_margin((box.position[0], box.position[2]), hull, margin)


def box_from_pose(box_id, size, position, quat=None, yaw=None) -> RigidBox:
    """Build a box from a full size vector and an orientation."""
    half = tuple(0.5 * float(s) for s in size)
    if quat is not None:
        q = tuple(float(c) for c in quat)
        return RigidBox(box_id, half, position, yaw=quat_yaw(q), orientation=q)
    return RigidBox(box_id, half, position, yaw=float(yaw or 0.0))


def scene_bounds_ok(box: RigidBox, shelf: Shelf, slop: float = DEFAULT_SLOP) -> bool:
    v = box.vertices()
    lo, hi = v.min(axis=0), v.max(axis=0)
    return bool((lo >= -slop).all() and hi[0] <= shelf.width + slop
                and hi[1] <= shelf.height + slop and hi[2] <= shelf.depth + slop)


def replace_boxes(scene: Scene, boxes: Iterable[RigidBox]) -> Scene:
    return Scene(scene.shelf, tuple(boxes))


__all__ = [
    "FLOOR_ID", "Shelf", "RigidBox", "Scene", "ContactPoint", "ContactManifold",
    "SupportEdge", "SupportGraph", "obb_contact", "build_support_graph",
    "static_collapse_oracle", "penetration", "shelf_colliders", "box_from_pose",
    "scene_bounds_ok", "replace_boxes", "has_side_contact",
]
