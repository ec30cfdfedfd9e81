"""Scene corpus generation, the efficiency metric and head-to-head benchmark runs."""
from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .collapse import CollapseThresholds
from .errors import (InvalidInput, InvalidScene, SceneGenerationFailed, StackPlanError,
                     UnclearableResidue)
from .physics import SimConfig, World
from .planners import (RemovalSimulator, plan_clearance_heuristic, plan_clearance_physics,
                       plan_extraction_heuristic, plan_extraction_physics, validate_plan)
from .reconstruct import derive_seed, observe_scene, sample_batch, settles_in_place
from .scene_model import (RigidBox, Scene, Shelf, build_support_graph, penetration,
                          scene_bounds_ok)

SCHEMA_VERSION = 1
DEFAULT_CATALOG = ((0.23, 0.31, 0.25), (0.20, 0.20, 0.20), (0.50, 0.17, 0.17))
CSV_COLUMNS = ("scene_id", "target_id", "approach", "success", "boxes_removed", "est_time_s",
               "planning_time_s", "sims_run")


class CorpusKind(str, Enum):
    STRUCTURED = "structured"
    UNSTRUCTURED = "unstructured"


class Task(str, Enum):
    EXTRACT_EVERY_BOX = "extract"
    CLEAR = "clear"


@dataclass(frozen=True)
class CorpusSpec:
    kind: CorpusKind = CorpusKind.UNSTRUCTURED
    n_scenes: int = 200
    boxes_per_scene: tuple = (3, 5)
    box_catalog: tuple = DEFAULT_CATALOG
    seed: int = 0
    shelf: Shelf = Shelf()
    # unstructured placement
    max_yaw_deg: float = 30.0
    stack_probability: float = 0.45
    lean_probability: float = 0.5
    allow_bridges: bool = True
    max_stack_height: float = 0.8
    placement_budget: int = 40
    scene_budget: int = 8

    def __post_init__(self):
        object.__setattr__(self, "kind", CorpusKind(self.kind))
        object.__setattr__(self, "boxes_per_scene", tuple(int(v) for v in self.boxes_per_scene))
        object.__setattr__(self, "box_catalog",
                           tuple(tuple(float(v) for v in dims) for dims in self.box_catalog))
        lo, hi = self.boxes_per_scene
        if self.n_scenes < 1 or lo < 1 or hi < lo:
            raise InvalidInput("scene count and box range must be positive")
        if not self.box_catalog:
            raise InvalidInput("box catalog must not be empty")
        if any(len(d) != 3 or min(d) <= 0 for d in self.box_catalog):
            raise InvalidInput("catalog entries must be three positive dimensions")
        if min(self.stack_probability, self.lean_probability) < 0 or \
                self.stack_probability + self.lean_probability > 1.0 or self.max_yaw_deg < 0:
            raise InvalidInput("placement probabilities must be non-negative and sum to at "
                               "most 1, max_yaw_deg non-negative")
        if self.max_stack_height <= 0:
            raise InvalidInput("max_stack_height must be positive")
        if self.placement_budget < 1 or self.scene_budget < 1:
            raise InvalidInput("budgets must be positive")

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "n_scenes": self.n_scenes,
                "boxes_per_scene": list(self.boxes_per_scene),
                "box_catalog": [list(d) for d in self.box_catalog], "seed": self.seed,
                "shelf": self.shelf.to_dict(), "max_yaw_deg": self.max_yaw_deg,
                "stack_probability": self.stack_probability,
                "lean_probability": self.lean_probability,
                "allow_bridges": self.allow_bridges, "max_stack_height": self.max_stack_height}


def efficiency_improvement(t_bh: float, t_pa: float) -> float:
    """Percent time saved relative to the physics-aware time: 100 (t_bh - t_pa) / t_pa."""
    if not t_pa > 0:
        raise InvalidInput("physics-aware time must be positive")
    return 100.0 * (t_bh - t_pa) / t_pa


# -- corpus generation -----------------------------------------------------

def scene_id(spec: CorpusSpec, index: int) -> str:
    return f"{spec.kind.value}-{spec.seed}-{index:04d}"


def _settle(scene: Scene, cfg: SimConfig, seconds: float = 1.5) -> Scene:
    world = World(scene, cfg)
    world.settle(seconds, rest_exit=True)
    out = world.to_scene()
    return Scene(out.shelf, tuple(RigidBox(b.id, b.half_extents, b.position, b.yaw,
                                           orientation=b.orientation) for b in out.boxes))


def _structured(spec: CorpusSpec, rng, n: int, cfg: SimConfig) -> Scene:
    shelf = spec.shelf
    cols = int(math.ceil(math.sqrt(n)))
    rows = int(math.ceil(n / cols))
    counts = [rows] * (n // rows) + ([n % rows] if n % rows else [])
    fitting = [d for d in spec.box_catalog if d[2] <= shelf.depth]
    if not fitting:
        raise SceneGenerationFailed("no catalog box fits the shelf depth")
    for _ in range(spec.placement_budget):
        dims = [fitting[int(rng.integers(len(fitting)))] for _ in counts]
        gaps = rng.uniform(0.01, 0.05, len(counts) + 1)
        if sum(d[0] for d in dims) + gaps.sum() > shelf.width:
            continue
        if any(c * d[1] > shelf.height for c, d in zip(counts, dims)):
            continue
        boxes = []
        x = 0.0
        for col, (count, (w, h, d)) in enumerate(zip(counts, dims)):
            x += gaps[col]
            for row in range(count):
                z_front = float(rng.uniform(0.0, min(0.05, shelf.depth - d)))
                boxes.append(RigidBox(f"b{len(boxes)}", (w / 2, h / 2, d / 2),
                                      (x + w / 2, row * h + h / 2, z_front + d / 2)))
            x += w
        return _settle(Scene(shelf, tuple(boxes)), cfg)
    raise SceneGenerationFailed(f"could not fit {n} boxes in a grid")


def _orientations(dims, shelf: Shelf) -> list:
    w, h, d = dims
    out = []
    for cand in ((w, h, d), (h, w, d), (d, h, w), (h, d, w), (w, d, h), (d, w, h)):
        if cand[2] <= shelf.depth and cand[0] <= shelf.width and cand[1] <= shelf.height \
                and cand not in out:
            out.append(cand)
    return out


def _footprint_x(half, yaw: float) -> tuple:
    c, s = abs(math.cos(yaw)), abs(math.sin(yaw))
    return half[0] * c + half[1] * s, half[0] * s + half[1] * c


def _drop_pose(spec, rng, boxes: list, options: list):
    """A yawed box dropped onto the floor or onto a random existing box."""
    shelf = spec.shelf
    w, h, d = options[int(rng.integers(len(options)))]
    yaw = math.radians(float(rng.uniform(-spec.max_yaw_deg, spec.max_yaw_deg)))
    half = (w / 2, h / 2, d / 2)
    rx, ry = _footprint_x(half, yaw)
    if 2 * rx > shelf.width:
        return None
    flat = [b for b in boxes if abs(b.yaw) < math.radians(2.0)]
    if flat and rng.uniform() < spec.stack_probability / (1.0 - spec.lean_probability):
        base = flat[int(rng.integers(len(flat)))]
        bx = base.vertices()[:, 0]
        x = float(rng.uniform(bx.min(), bx.max()))
    else:
        x = float(rng.uniform(rx, shelf.width - rx))
    x = min(max(x, rx + 1e-3), shelf.width - rx - 1e-3)
    z_front = float(rng.uniform(0.0, shelf.depth - d))
    # drop height: just above whatever lies under the new box's footprint
    floor_y = 0.0
    for b in boxes:
        v = b.vertices()
        if v[:, 0].max() > x - rx and v[:, 0].min() < x + rx and \
                v[:, 2].max() > z_front and v[:, 2].min() < z_front + d:
            floor_y = max(floor_y, float(v[:, 1].max()))
    y = floor_y + ry + 0.003
    if y + ry > min(shelf.height, spec.max_stack_height):
        return None
    return half, (x, y, z_front + d / 2), yaw


def _lean_pose(spec, rng, boxes: list, options: list, slop: float):
    """A tall box standing on the floor, tilted onto a flat-lying box.

    It rests either along its inner face on the neighbour's top edge, or with
    its top corner against the neighbour's side like a ladder.  Higher
    neighbours are tried first (that is what props a box up from below its
    own centroid), then both sides and a few tilts; the first pose that fits
    without touching anything else is kept.
    """
    shelf = spec.shelf
    tall = [o for o in options if o[1] >= 1.5 * o[0]]
    flat = [b for b in boxes if abs(b.yaw) < math.radians(2.0)]
    if not tall or not flat:
        return None
    w, h, d = tall[int(rng.integers(len(tall)))]
    hw, hh = w / 2, h / 2
    # below atan(hw / hh) the centroid sits over the foot and the box rights itself
    tilts = np.sort(rng.uniform(math.degrees(math.atan2(hw, hh)) + 5.0, 35.0, 3))
    for nb in sorted(flat, key=lambda b: (-b.vertices()[:, 1].max(), b.id)):
        v = nb.vertices()
        y_lo, y_hi = float(v[:, 1].min()), float(v[:, 1].max())
        lo_z = max(0.0, nb.position[2] - nb.half_extents[2] - d / 2)
        hi_z = min(shelf.depth - d, nb.position[2] + nb.half_extents[2] - d / 2)
        if hi_z < lo_z:
            continue
        z_front = float(rng.uniform(lo_z, hi_z))
        sides = (1.0, -1.0) if rng.uniform() < 0.5 else (-1.0, 1.0)
        for deg in tilts:
            th = math.radians(float(deg))
            if y_hi / math.cos(th) <= h - 0.02:
                reach = y_hi * math.tan(th)               # face on the top edge
            elif y_lo + 0.01 <= h * math.cos(th) <= y_hi - 0.01:
                reach = h * math.sin(th)                  # corner on the side face
            else:
                continue
            for side in sides:
                edge_x = float(v[:, 0].max()) if side > 0 else float(v[:, 0].min())
                foot = edge_x + side * (reach + 0.0005)
                cx = foot + side * (hw * math.cos(th) - hh * math.sin(th))
                cy = hw * math.sin(th) + hh * math.cos(th) + 0.0005
                box = RigidBox("_", (hw, hh, d / 2), (cx, cy, z_front + d / 2), side * th)
                if not scene_bounds_ok(box, shelf, slop):
                    continue
                if any(penetration(box, o) > slop for o in boxes):
                    continue
                return box.half_extents, box.position, box.yaw
    return None


def _try_place(spec, rng, boxes: list, box_id: str, cfg: SimConfig) -> Optional[list]:
    shelf = spec.shelf
    options = [o for dims in spec.box_catalog for o in _orientations(dims, shelf)]
    if not options:
        raise SceneGenerationFailed("no catalog box fits the shelf")
    lean = bool(boxes) and rng.uniform() < spec.lean_probability
    pose = _lean_pose(spec, rng, boxes, options, cfg.contact_slop) if lean else _drop_pose(spec, rng, boxes, options)
    if pose is None:
        return None
    half, position, yaw = pose
    new = RigidBox(box_id, half, position, yaw)
    scene = Scene(shelf, tuple(boxes) + (new,))
    try:
        scene.validate(cfg.contact_slop)
    except InvalidScene:
        return None
    settled = _settle(scene, cfg)
    try:
        settled.validate(cfg.contact_slop)
    except InvalidScene:
        return None
    before = np.array([b.position for b in boxes]).reshape(-1, 3)
    after = np.array([b.position for b in settled.boxes[:-1]]).reshape(-1, 3)
    if len(boxes) and np.linalg.norm(after - before, axis=1).max() > 0.02:
        return None
    placed = settled.boxes[-1]
    if np.linalg.norm(np.subtract(placed.position, position)) > 0.3:
        return None
    # dropped boxes must come to lie flat; only lean placements end up tilted
    if not lean and abs(placed.yaw) > math.radians(2.0):
        return None
    if not spec.allow_bridges:
        graph = build_support_graph(settled, cfg.contact_slop)
        if len(graph.supporters_of(box_id)) > 1:
            return None
    return list(settled.boxes)


def _unstructured(spec: CorpusSpec, rng, n: int, cfg: SimConfig) -> Scene:
    boxes: list = []
    for j in range(n):
        for _ in range(spec.placement_budget):
            out = _try_place(spec, rng, boxes, f"b{j}", cfg)
            if out is not None:
                boxes = out
                break
        else:
            raise SceneGenerationFailed(f"could not place box {j + 1} of {n}")
    return Scene(spec.shelf, tuple(boxes))


def generate_scene(spec: CorpusSpec, index: int, cfg: Optional[SimConfig] = None):
    """(settled truth Scene, front-view ObservationSet) for corpus entry ``index``.

    Scenes that do not stay put under disturbances alone are regenerated, up
    to ``spec.scene_budget`` times.
    """
    if not 0 <= index < spec.n_scenes:
        raise InvalidInput(f"index {index} outside corpus of {spec.n_scenes}")
    cfg = cfg or SimConfig()
    rng = np.random.Generator(np.random.PCG64(derive_seed(spec.seed, index)))
    lo, hi = spec.boxes_per_scene
    last: Optional[Exception] = None
    for _ in range(spec.scene_budget):
        n = int(rng.integers(lo, hi + 1))
        try:
            if spec.kind == CorpusKind.STRUCTURED:
                scene = _structured(spec, rng, n, cfg)
            else:
                scene = _unstructured(spec, rng, n, cfg)
        except SceneGenerationFailed as exc:
            last = exc
            continue
        if settles_in_place(scene, cfg, int(rng.integers(2 ** 63))):
            return scene, observe_scene(scene)
        last = SceneGenerationFailed("generated scene is not stable at rest")
    raise SceneGenerationFailed(f"scene {index}: {last}")


# -- benchmark -------------------------------------------------------------

@dataclass(frozen=True)
class BenchRow:
    scene_id: str
    target_id: str
    approach: str
    success: bool
    boxes_removed: int
    est_time_s: float
    planning_time_s: float
    sims_run: int
    error: str = ""

    def csv_values(self, include_timing: bool) -> list:
        return [self.scene_id, self.target_id, self.approach, int(self.success),
                self.boxes_removed, f"{self.est_time_s:.3f}",
                f"{self.planning_time_s:.3f}" if include_timing else "", self.sims_run]


@dataclass(frozen=True)
class ApproachSummary:
    runs: int
    success_rate: float
    avg_boxes_removed: float
    avg_est_time_s: float

    @classmethod
    def of(cls, rows) -> "ApproachSummary":
        rows = list(rows)
        if not rows:
            return cls(0, 0.0, 0.0, 0.0)
        return cls(len(rows), sum(r.success for r in rows) / len(rows),
                   float(np.mean([r.boxes_removed for r in rows])),
                   float(np.mean([r.est_time_s for r in rows])))

    def to_dict(self) -> dict:
        return {"runs": self.runs, "success_rate": round(self.success_rate, 6),
                "avg_boxes_removed": round(self.avg_boxes_removed, 6),
                "avg_est_time_s": round(self.avg_est_time_s, 6)}


@dataclass
class BenchReport:
    task: Task
    corpus: CorpusSpec
    rows: list
    physics: ApproachSummary
    heuristic: ApproachSummary
    success_rate_delta: float
    efficiency_improvement: Optional[float]
    errors: list = field(default_factory=list)

    @classmethod
    def from_rows(cls, task: Task, corpus: CorpusSpec, rows, errors=()) -> "BenchReport":
        rows = sorted(rows, key=lambda r: (r.scene_id, r.target_id, r.approach))
        pa = ApproachSummary.of(r for r in rows if r.approach == "physics")
        bh = ApproachSummary.of(r for r in rows if r.approach == "heuristic")
        eff = efficiency_improvement(bh.avg_est_time_s, pa.avg_est_time_s) \
            if pa.avg_est_time_s > 0 else None
        return cls(task, corpus, rows, pa, bh, 100.0 * (pa.success_rate - bh.success_rate),
                   eff, sorted(errors))

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "kind": "bench_report", "task": self.task.value,
                "corpus": self.corpus.to_dict(),
                "physics": self.physics.to_dict(), "heuristic": self.heuristic.to_dict(),
                "success_rate_delta_pp": round(self.success_rate_delta, 6),
                "efficiency_improvement_pct": None if self.efficiency_improvement is None
                else round(self.efficiency_improvement, 6),
                "errors": [{"scene_id": s, "target_id": t, "approach": a, "message": m}
                           for s, t, a, m in self.errors]}

    def to_csv(self, include_timing: bool = False) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.rows:
            writer.writerow(r.csv_values(include_timing))
        return buf.getvalue()


def run_scene(corpus: CorpusSpec, index: int, task: Task, cfg: SimConfig,
              thresholds: CollapseThresholds, k: int) -> tuple:
    """Rows and (scene, target, approach, message) errors for one corpus scene."""
    sid = scene_id(corpus, index)
    try:
        truth, obs = generate_scene(corpus, index, cfg)
    except StackPlanError as exc:
        return [], [(sid, "", "", f"{type(exc).__name__}: {exc}")]
    rows, errors = [], []
    truth_sim = RemovalSimulator([truth], cfg, thresholds)
    sim = None
    try:
        samples = sample_batch(obs, cfg, derive_seed(cfg.rng_seed, index), k)
        sim = RemovalSimulator(samples, cfg, thresholds)
    except StackPlanError as exc:
        sample_error = exc

    def physics(target):
        if sim is None:
            raise sample_error
        t0 = time.perf_counter()
        before = sim.simulations_run
        try:
            if task == Task.CLEAR:
                plan = plan_clearance_physics(obs, cfg, thresholds, simulator=sim)
            else:
                plan = plan_extraction_physics(obs, target, cfg, thresholds, simulator=sim)
        except UnclearableResidue as exc:
            report = validate_plan(truth, exc.partial_plan, cfg, thresholds, truth_sim)
            return BenchRow(sid, target, "physics", False, report.boxes_removed,
                            report.estimated_time, time.perf_counter() - t0,
                            sim.simulations_run - before, "UnclearableResidue")
        report = validate_plan(truth, plan, cfg, thresholds, truth_sim)
        return BenchRow(sid, target, "physics", report.success, report.boxes_removed,
                        report.estimated_time, time.perf_counter() - t0,
                        sim.simulations_run - before)

    def heuristic(target):
        t0 = time.perf_counter()
        plan = plan_clearance_heuristic(obs) if task == Task.CLEAR \
            else plan_extraction_heuristic(obs, target)
        report = validate_plan(truth, plan, cfg, thresholds, truth_sim)
        return BenchRow(sid, target, "heuristic", report.success, report.boxes_removed,
                        report.estimated_time, time.perf_counter() - t0, 0)

    targets = [""] if task == Task.CLEAR else list(obs.ids)
    for target in targets:
        for name, fn in (("physics", physics), ("heuristic", heuristic)):
            try:
                rows.append(fn(target))
            except StackPlanError as exc:
                # nothing is executed when no plan could be made
                message = f"{type(exc).__name__}: {exc}"
                rows.append(BenchRow(sid, target, name, False, 0, 0.0, 0.0, 0, message))
                errors.append((sid, target, name, message))
    return rows, errors


def _run_scene_star(args):
    return run_scene(*args)


def run_benchmark(corpus: CorpusSpec, task: Task = Task.EXTRACT_EVERY_BOX,
                  cfg: Optional[SimConfig] = None,
                  thresholds: CollapseThresholds = CollapseThresholds(), k: int = 10,
                  workers: int = 1, progress=None) -> BenchReport:
    """Plan and validate both approaches on every corpus scene.

    Scenes run in ``workers`` processes; every scene derives its own seeds
    from its index, so the report does not depend on the worker count.
    ``progress`` (optional) is called with (done, total) after each scene.
    """
    cfg = cfg or SimConfig()
    task = Task(task)
    if k < 1:
        raise InvalidInput("k must be at least 1")
    jobs = [(corpus, i, task, cfg, thresholds, k) for i in range(corpus.n_scenes)]
    rows, errors = [], []
    if workers <= 1:
        results = map(_run_scene_star, jobs)
        pool = None
    else:
        pool = ProcessPoolExecutor(max_workers=workers)
        results = pool.map(_run_scene_star, jobs)
    try:
        for done, (r, e) in enumerate(results, 1):
            rows.extend(r)
            errors.extend(e)
            if progress is not None:
                progress(done, len(jobs))
    finally:
        if pool is not None:
            pool.shutdown()
    return BenchReport.from_rows(task, corpus, rows, errors)
