"""Hand-built scenes shipped with the package.

``structured_demo``
    Two columns on a 1.0 x 1.6 x 0.3 m shelf.  Left: a 23 x 31 x 25 cm box
    (the target ``T``) with a 20 cm cube ``X`` on it.  Right: three 20 cm
    cubes.  Pulling ``T`` needs ``X`` gone first; ordering by height instead
    clears the top two cubes of the right column as well.
``counterexample``
    Cube ``S`` on cube ``B`` with a long 17 x 50 x 17 cm box ``L`` standing
    on the floor and leaning 30 degrees onto the top edge of ``S``.  ``L``'s
    centroid is lower than ``S``'s, so height ordering pulls ``S`` first and
    ``L`` falls over.
``chain``
    A column ``T`` (bottom), ``A``, ``B`` (top).
"""
from __future__ import annotations

import json
from pathlib import Path
import math
from importlib import resources
from typing import Optional

import numpy as np

from .physics import SimConfig, World
from .reconstruct import ObservationSet, observe_scene
from .scene_model import RigidBox, Scene, Shelf

NAMES = ("structured_demo", "counterexample", "chain")


def _settled(scene: Scene, seconds: float = 1.0) -> Scene:
    cfg = SimConfig(rest_exit=False)
    world = World(scene, cfg)
    world.settle(seconds)
    out = world.to_scene()
    # velocities of a settled scene are solver noise; store the scene at rest
    return Scene(out.shelf, tuple(RigidBox(b.id, b.half_extents, b.position, b.yaw,
                                           orientation=b.orientation) for b in out.boxes))


def _box(box_id, size, x, y_bottom, z_front, yaw=0.0):
    w, h, d = size
    return RigidBox(box_id, (w / 2, h / 2, d / 2), (x, y_bottom + h / 2, z_front + d / 2), yaw)


def build_structured_demo() -> Scene:
    boxes = [
        _box("T", (0.23, 0.31, 0.25), 0.20, 0.0, 0.02),
        _box("X", (0.20, 0.20, 0.20), 0.20, 0.31, 0.04),
        _box("C1", (0.20, 0.20, 0.20), 0.65, 0.0, 0.03),
        _box("C2", (0.20, 0.20, 0.20), 0.65, 0.20, 0.01),
        _box("C3", (0.20, 0.20, 0.20), 0.65, 0.40, 0.05),
    ]
    return _settled(Scene(Shelf(), tuple(boxes)))


def build_counterexample(lean_deg: float = 30.0) -> Scene:
    shelf = Shelf()
    base = _box("B", (0.20, 0.20, 0.20), 0.40, 0.0, 0.02)
    top = _box("S", (0.20, 0.20, 0.20), 0.40, 0.20, 0.02)
    th = math.radians(lean_deg)
    hw, hh, hd = 0.085, 0.25, 0.085
    edge_x, edge_y = 0.50, 0.40
    # bottom-left corner of L on the floor, left face through the top-right edge of S
    foot = edge_x + edge_y * math.tan(th) + 0.0005
    cx = foot + hw * math.cos(th) - hh * math.sin(th)
    cy = hw * math.sin(th) + hh * math.cos(th)
    lean = RigidBox("L", (hw, hh, hd), (cx, cy + 0.0005, 0.02 + hd), yaw=th)
    return _settled(Scene(shelf, (base, top, lean)))


def build_chain() -> Scene:
    boxes = [
        _box("T", (0.20, 0.20, 0.20), 0.50, 0.0, 0.02),
        _box("A", (0.20, 0.20, 0.20), 0.50, 0.20, 0.02),
        _box("B", (0.20, 0.20, 0.20), 0.50, 0.40, 0.02),
    ]
    return _settled(Scene(Shelf(), tuple(boxes)))


BUILDERS = {"structured_demo": build_structured_demo, "counterexample": build_counterexample,
            "chain": build_chain}
TARGETS = {"structured_demo": "T", "counterexample": "B", "chain": "T"}


def fixture_document(name: str) -> dict:
    scene = BUILDERS[name]()
    return {"schema_version": 1, "kind": "fixture", "name": name, "target": TARGETS[name],
            "scene": scene.to_dict(), "observation": observe_scene(scene).to_dict()}


def load_fixture(name: str):
    """(truth scene, observation, target id) for a shipped fixture."""
    if name not in BUILDERS:
        raise KeyError(f"unknown fixture {name!r}; choose from {', '.join(NAMES)}")
    text = resources.files("stackplan").joinpath("data", f"{name}.json").read_text()
    doc = json.loads(text)
    return Scene.from_dict(doc["scene"]), ObservationSet.from_dict(doc["observation"]), doc["target"]


def write_fixtures(directory) -> None:
    """Regenerate the JSON copies under ``directory``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for name in NAMES:
        (out / f"{name}.json").write_text(json.dumps(fixture_document(name), indent=2) + "\n")


if __name__ == "__main__":
    import sys
    write_fixtures(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).parent / "data")
