"""Trajectory dumps (JSON lines) of executed removals and SVG frames of them.

A dump starts with a header line (shelf, box sizes, timestep, thresholds),
then one line per simulated step and one outcome line after each removal.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .collapse import Classification, CollapseThresholds, removal_seed, run_removal
from .errors import InvalidInput
from .geometry import box_vertices, convex_hull, quat_matrix
from .physics import SimConfig, World
from .scene_model import Scene, Shelf

SCHEMA_VERSION = 1
DIGITS = 6

COLORS = {"box": "#d9b380", "target": "#f0a030", "driven": "#6fa8dc", "collapsed": "#d9534f"}


def _r(values) -> list:
    return [round(float(v), DIGITS) for v in values]


def record_removals(scene: Scene, box_ids: Sequence[str], cfg: Optional[SimConfig] = None,
                    thresholds: CollapseThresholds = CollapseThresholds(),
                    target: Optional[str] = None, stop_on_collapse: bool = True) -> list:
    """Execute ``box_ids`` in order on ``scene`` and return the dump as a list of dicts.

    Seeds follow the same (prefix, box) derivation as validation, so the
    recorded outcomes match validate_plan on the same scene.
    """
    cfg = cfg or SimConfig()
    for b in box_ids:
        scene.get(b)
    world = World(scene, cfg)
    lines = [{"schema_version": SCHEMA_VERSION, "kind": "trajectory_header",
              "shelf": scene.shelf.to_dict(),
              "boxes": [{"id": b.id, "half_extents": _r(b.half_extents)} for b in scene.active()],
              "timestep": cfg.timestep, "thresholds": thresholds.to_dict(),
              "plan": list(box_ids), "target": target}]
    step = 0
    done: list = []
    for box in box_ids:
        outcome, history = run_removal(world, box, thresholds,
                                       seed=removal_seed(cfg.rng_seed, done, box), with_quats=True)
        trace = history.trace
        live = [i for i, a in enumerate(history.active) if a]
        for s in range(len(trace)):
            lines.append({"kind": "step", "step": step, "t": round(step * cfg.timestep, DIGITS),
                          "removing": box,
                          "boxes": [{"id": history.ids[i], "p": _r(trace.positions[s, i]),
                                     "q": _r(trace.quats[s, i]),
                                     "speed": round(float(trace.speed[s, i]), DIGITS)}
                                    for i in live]})
            step += 1
        lines.append({"kind": "removal_outcome", **outcome.to_dict()})
        done.append(box)
        if stop_on_collapse and outcome.classification == Classification.COLLAPSE:
            break
    return lines


def write_jsonl(lines: list, path) -> None:
    Path(path).write_text("".join(json.dumps(line, sort_keys=True) + "\n" for line in lines))


@dataclass
class Trajectory:
    header: dict
    steps: list = field(default_factory=list)
    outcomes: list = field(default_factory=list)
    truncated: bool = False


def read_trajectory(path) -> Trajectory:
    """Parse a dump; a cut-off tail (partial last line, missing outcomes) is tolerated."""
    text = Path(path).read_text()
    lines = text.split("\n")
    traj: Optional[Trajectory] = None
    for n, raw in enumerate(lines):
        if not raw.strip():
            continue
        try:
            item = json.loads(raw)
        except json.JSONDecodeError:
            if traj is not None and all(not rest.strip() for rest in lines[n + 1:]):
                traj.truncated = True
                break
            raise InvalidInput(f"line {n + 1}: not valid JSON")
        if traj is None:
            if item.get("kind") != "trajectory_header":
                raise InvalidInput("a trajectory must start with its header line")
            traj = Trajectory(item)
        elif item.get("kind") == "step":
            traj.steps.append(item)
        elif item.get("kind") == "removal_outcome":
            traj.outcomes.append(item)
        else:
            raise InvalidInput(f"line {n + 1}: unexpected kind {item.get('kind')!r}")
    if traj is None:
        raise InvalidInput("empty trajectory")
    return traj


@dataclass(frozen=True)
class RenderSpec:
    frame_stride: int = 24
    scale: float = 400.0  # pixels per metre
    colors: tuple = tuple(sorted(COLORS.items()))

    def __post_init__(self):
        if self.frame_stride < 1:
            raise InvalidInput("frame_stride must be at least 1")
        if self.scale <= 0:
            raise InvalidInput("scale must be positive")


def collapsed_at(traj: Trajectory, upto: int) -> set:
    """Boxes counted as collapsed by step index ``upto``.

    Outcomes of completed removals count, and so does any box whose
    centroid moved more than the displacement threshold since its current
    removal began (so a truncated dump still shows the collapse).
    """
    limit = float(traj.header.get("thresholds", {}).get("displacement",
                                                         CollapseThresholds().displacement))
    out: set = set()
    removing = None
    start: dict = {}
    finished = 0
    for item in traj.steps[:upto + 1]:
        if item["removing"] != removing:
            if removing is not None and finished < len(traj.outcomes):
                out.update(traj.outcomes[finished].get("collapsed_boxes", []))
                finished += 1
            removing = item["removing"]
            start = {b["id"]: np.array(b["p"]) for b in item["boxes"]}
        for b in item["boxes"]:
            if b["id"] != removing and b["id"] in start and \
                    np.linalg.norm(np.array(b["p"]) - start[b["id"]]) > limit:
                out.add(b["id"])
    return out


def frame_svg(traj: Trajectory, index: int, spec: RenderSpec = RenderSpec()) -> str:
    """Front view of step ``index``: shelf outline and one polygon per box."""
    shelf = Shelf.from_dict(traj.header["shelf"])
    halves = {b["id"]: np.array(b["half_extents"]) for b in traj.header["boxes"]}
    colors = dict(spec.colors)
    target = traj.header.get("target")
    item = traj.steps[index]
    collapsed = collapsed_at(traj, index)
    s = spec.scale
    pad = 10.0
    w = shelf.width * s + 2 * pad
    h = shelf.height * s + 2 * pad

    def px(x, y):
        return f"{pad + x * s:.2f},{pad + (shelf.height - y) * s:.2f}"

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0f}" height="{h:.0f}" '
           f'viewBox="0 0 {w:.2f} {h:.2f}">',
           f'<rect x="{pad}" y="{pad}" width="{shelf.width * s:.2f}" '
           f'height="{shelf.height * s:.2f}" fill="white" stroke="black" stroke-width="2"/>',
           f'<text x="{pad + 4}" y="{pad + 14}" font-size="12" font-family="monospace">'
           f't={item["t"]:.3f}s removing {item["removing"]}</text>']
    # draw far boxes first so nearer faces overlap them
    for b in sorted(item["boxes"], key=lambda b: -b["p"][2]):
        bid = b["id"]
        if bid in collapsed:
            role = "collapsed"
        elif bid == item["removing"]:
            role = "driven"
        elif bid == target:
            role = "target"
        else:
            role = "box"
        verts = box_vertices(np.array(b["p"]), quat_matrix(np.array(b["q"])), halves[bid])
        hull = convex_hull(verts[:, :2])
        points = " ".join(px(x, y) for x, y in hull)
        out.append(f'<polygon points="{points}" fill="{colors[role]}" stroke="black" '
                   f'stroke-width="1" data-id="{bid}" data-role="{role}"/>')
        cx, cy = b["p"][0], b["p"][1]
        out.append(f'<text x="{pad + cx * s:.2f}" y="{pad + (shelf.height - cy) * s:.2f}" '
                   f'font-size="11" font-family="monospace" text-anchor="middle">{bid}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def frame_indices(traj: Trajectory, spec: RenderSpec) -> list:
    return list(range(0, len(traj.steps), spec.frame_stride))


def render_frames(traj: Trajectory, out_dir, spec: RenderSpec = RenderSpec()) -> list:
    """Write frame_00000.svg, ... into ``out_dir``; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for n, i in enumerate(frame_indices(traj, spec)):
        path = out / f"frame_{n:05d}.svg"
        path.write_text(frame_svg(traj, i, spec))
        paths.append(path)
    return paths
