"""Extraction and clearance planners (simulation-backed and height-ordered) and the plan validator."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

from .collapse import (AggregatedOutcome, Classification, CollapseThresholds, RemovalOutcome,
                       removal_seed, run_removal)
from .errors import InvalidInput, PlanNotFound, SampleError, StackPlanError, UnclearableResidue, UnknownBox
from .physics import SimConfig, World
from .reconstruct import ObservationSet, sample_batch
from .scene_model import Scene

SCHEMA_VERSION = 1


class Approach(str, Enum):
    PHYSICS = "physics"
    HEURISTIC = "heuristic"


@dataclass(frozen=True)
class PlannedAction:
    box_id: str
    predicted: Optional[AggregatedOutcome] = None

    def to_dict(self) -> dict:
        out = {"box_id": self.box_id}
        if self.predicted is not None:
            out["predicted_safe"] = self.predicted.safe
            out["predicted_collapse_free"] = not self.predicted.collapse_detected
        else:
            out["predicted_safe"] = None
        return out


@dataclass
class ActionPlan:
    actions: list
    approach: Approach
    task: str = "extract"
    target: Optional[str] = None
    simulations_run: int = 0
    planning_time: float = 0.0
    passes: int = 0

    def __post_init__(self):
        ids = self.box_ids
        if len(set(ids)) != len(ids):
            raise InvalidInput("a plan may not remove a box twice")
        if self.task == "extract" and ids and self.target is not None and ids[-1] != self.target:
            raise InvalidInput("an extraction plan must end with its target")

    @property
    def box_ids(self) -> list:
        return [a.box_id for a in self.actions]

    def __len__(self):
        return len(self.actions)

    def to_dict(self, include_timing: bool = False) -> dict:
        stats = {"simulations_run": self.simulations_run,
                 "planning_time_s": round(self.planning_time, 6) if include_timing else None}
        if self.task == "clear":
            stats["passes"] = self.passes
        return {"schema_version": SCHEMA_VERSION, "kind": "plan",
                "approach": self.approach.value, "task": self.task, "target": self.target,
                "actions": [a.to_dict() for a in self.actions], "stats": stats}

    @classmethod
    def from_dict(cls, d: dict) -> "ActionPlan":
        stats = d.get("stats", {})
        return cls([PlannedAction(str(a["box_id"])) for a in d["actions"]],
                   Approach(d["approach"]), d.get("task", "extract"), d.get("target"),
                   int(stats.get("simulations_run") or 0),
                   float(stats.get("planning_time_s") or 0.0), int(stats.get("passes") or 0))


@dataclass
class ExecutionReport:
    success: bool
    boxes_removed: int
    collapsed_during_execution: frozenset
    estimated_time: float
    outcomes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "kind": "execution_report",
                "success": self.success, "boxes_removed": self.boxes_removed,
                "collapsed_during_execution": sorted(self.collapsed_during_execution),
                "estimated_time_s": round(self.estimated_time, 6),
                "outcomes": [o.to_dict() for o in self.outcomes]}


class RemovalSimulator:
    """Runs removals on K sample worlds, caching results per (prefix, box).

    The post-removal world states are kept as snapshots so a prefix is never
    replayed from scratch.
    """

    def __init__(self, samples: Sequence, cfg: Optional[SimConfig] = None,
                 thresholds: CollapseThresholds = CollapseThresholds()):
        if not samples:
            raise InvalidInput("at least one sample is required")
        self.cfg = cfg or SimConfig()
        self.thresholds = thresholds
        self.worlds = [World(getattr(s, "scene", s), self.cfg) for s in samples]
        self._base = [w.snapshot() for w in self.worlds]
        self._cache: dict = {}
        self.simulations_run = 0

    @property
    def k(self) -> int:
        return len(self.worlds)

    def _states(self, prefix: tuple) -> list:
        if not prefix:
            return self._base
        return self._cache[(prefix[:-1], prefix[-1])][1]

    def attempt(self, prefix: Sequence[str], box: str) -> AggregatedOutcome:
        prefix = tuple(prefix)
        key = (prefix, box)
        if key not in self._cache:
            if prefix and (prefix[:-1], prefix[-1]) not in self._cache:
                self.attempt(prefix[:-1], prefix[-1])
            seed = removal_seed(self.cfg.rng_seed, prefix, box)
            outcomes, posts = [], []
            for i, (world, state) in enumerate(zip(self.worlds, self._states(prefix))):
                world.restore(state)
                try:
                    outcome, _ = run_removal(world, box, self.thresholds, seed=seed)
                except StackPlanError as exc:
                    if isinstance(exc, (UnknownBox, InvalidInput)):
                        raise
                    raise SampleError(i, exc) from exc
                outcomes.append(outcome)
                posts.append(world.snapshot())
            self.simulations_run += len(self.worlds)
            self._cache[key] = (AggregatedOutcome.from_outcomes(outcomes), posts)
        return self._cache[key][0]


def _simulator(obs, cfg, thresholds, k, base_seed, samples, simulator):
    if simulator is not None:
        return simulator
    if samples is None:
        samples = sample_batch(obs, cfg, cfg.rng_seed if base_seed is None else base_seed, k)
    return RemovalSimulator(samples, cfg, thresholds)


def _extraction_search(sim: RemovalSimulator, target: str, budget: int, tolerance: int,
                       trace: list) -> list:
    """One backtracking search; an attempt counts as collapsing when more than
    ``tolerance`` samples collapse."""
    plan: list = []
    removed: list = []
    tried: set = set()
    action = target
    attempts = 0
    while True:
        if attempts >= budget:
            raise PlanNotFound(f"attempt budget of {budget} exhausted", trace)
        tried.add((frozenset(removed), action))
        attempts += 1
        agg = sim.attempt(removed, action)
        collapsing = agg.collapse_count > tolerance
        trace.append({"tolerance": tolerance, "prefix": list(removed), "action": action,
                      "collapsed_samples": agg.collapse_count, "collapse": collapsing,
                      "first_collapsed": agg.first_collapsed_mode})
        if not collapsing:
            plan.append(PlannedAction(action, agg))
            removed.append(action)
            if action == target:
                return plan
            action = target
            continue
        nxt = None
        for cand in agg.ranked_collapsed():
            if cand not in removed and (frozenset(removed), cand) not in tried:
                nxt = cand
                break
        if nxt is None:
            raise PlanNotFound("every box that collapses has already been tried "
                               "after this prefix", trace)
        action = nxt


def plan_extraction_physics(obs: ObservationSet, target: str, cfg: Optional[SimConfig] = None,
                            thresholds: CollapseThresholds = CollapseThresholds(), k: int = 10,
                            base_seed: Optional[int] = None, samples=None,
                            simulator: Optional[RemovalSimulator] = None,
                            max_risk: float = 0.3) -> ActionPlan:
    """Backtracking search for a collapse-free way to pull ``target`` out.

    Try the target; if some sample collapses, try the box that most often
    collapsed first instead (then the other collapsed boxes); a collapse-free
    non-target removal is kept and the target retried.  A minor shift of
    neighbours is tolerated.  When no plan avoids every sampled collapse, the
    search is repeated accepting removals that collapse in at most 1, 2, ...
    samples, up to a ``max_risk`` fraction of them.
    """
    cfg = cfg or SimConfig()
    obs.require(target)
    if k < 1:
        raise InvalidInput("k must be at least 1")
    if not 0.0 <= max_risk < 1.0:
        raise InvalidInput("max_risk must lie in [0, 1)")
    t0 = time.perf_counter()
    sim = _simulator(obs, cfg, thresholds, k, base_seed, samples, simulator)
    sims_before = sim.simulations_run
    n = len(obs.ids)
    trace: list = []
    for tolerance in range(int(math.floor(max_risk * sim.k + 1e-9)) + 1):
        try:
            plan = _extraction_search(sim, target, n * n, tolerance, trace)
        except PlanNotFound:
            continue
        return ActionPlan(plan, Approach.PHYSICS, "extract", target,
                          sim.simulations_run - sims_before, time.perf_counter() - t0)
    raise PlanNotFound(f"no plan for {target!r} within a collapse risk of {max_risk:.0%}", trace)


def plan_clearance_physics(obs: ObservationSet, cfg: Optional[SimConfig] = None,
                           thresholds: CollapseThresholds = CollapseThresholds(), k: int = 10,
                           base_seed: Optional[int] = None, samples=None,
                           simulator: Optional[RemovalSimulator] = None,
                           max_risk: float = 0.3) -> ActionPlan:
    """Sweep the boxes in detection order, keeping removals that disturb nothing.

    Boxes whose removal shifts or collapses anything are skipped and retried
    on the next pass.  When a pass finds no box that is safe in every sample,
    the least risky box (fewest collapsing, then fewest disturbed samples) is
    taken if at most a ``max_risk`` fraction of samples were disturbed;
    otherwise the search ends.
    """
    cfg = cfg or SimConfig()
    if not 0.0 <= max_risk < 1.0:
        raise InvalidInput("max_risk must lie in [0, 1)")
    t0 = time.perf_counter()
    sim = _simulator(obs, cfg, thresholds, k, base_seed, samples, simulator)
    sims_before = sim.simulations_run
    remaining = list(obs.ids)
    plan: list = []
    removed: list = []
    passes = 0
    while remaining:
        passes += 1
        progress = False
        risky = []
        for box in list(remaining):
            agg = sim.attempt(removed, box)
            if agg.safe:
                plan.append(PlannedAction(box, agg))
                removed.append(box)
                remaining.remove(box)
                progress = True
            else:
                disturbed = sum(o.classification != Classification.SAFE for o in agg.per_sample)
                risky.append((agg.collapse_count, disturbed, len(risky), box, agg))
        limit = int(math.floor(max_risk * sim.k + 1e-9))
        eligible = [r for r in risky if r[1] <= limit]
        if not progress and eligible:
            _, _, _, box, agg = min(eligible)
            plan.append(PlannedAction(box, agg))
            removed.append(box)
            remaining.remove(box)
            progress = True
        if not progress:
            partial = ActionPlan(plan, Approach.PHYSICS, "clear", None,
                                 sim.simulations_run - sims_before,
                                 time.perf_counter() - t0, passes)
            raise UnclearableResidue(remaining, partial)
    return ActionPlan(plan, Approach.PHYSICS, "clear", None, sim.simulations_run - sims_before,
                      time.perf_counter() - t0, passes)


def height_order(obs: ObservationSet) -> list:
    """Box ids from highest centroid to lowest; ties by x, then id."""
    metric = obs.metric()
    return [m.id for m in sorted(metric, key=lambda m: (-round(m.center[1], 9),
                                                         round(m.center[0], 9), m.id))]


def plan_extraction_heuristic(obs: ObservationSet, target: str) -> ActionPlan:
    obs.require(target)
    t0 = time.perf_counter()
    order = height_order(obs)
    ids = order[:order.index(target) + 1]
    return ActionPlan([PlannedAction(b) for b in ids], Approach.HEURISTIC, "extract", target,
                      0, time.perf_counter() - t0)


def plan_clearance_heuristic(obs: ObservationSet) -> ActionPlan:
    t0 = time.perf_counter()
    return ActionPlan([PlannedAction(b) for b in height_order(obs)], Approach.HEURISTIC,
                      "clear", None, 0, time.perf_counter() - t0, 1)


def validate_plan(truth: Scene, plan, cfg: Optional[SimConfig] = None,
                  thresholds: CollapseThresholds = CollapseThresholds(),
                  simulator: Optional[RemovalSimulator] = None) -> ExecutionReport:
    """Execute the removals one after another on the ground-truth scene.

    Stops at the first collapse; the collapsing pick counts as executed.
    ``simulator`` may be a one-world RemovalSimulator over ``truth`` shared by
    several validations; its cached prefixes give the same outcomes.
    """
    cfg = cfg or SimConfig()
    ids = plan.box_ids if isinstance(plan, ActionPlan) else list(plan)
    for b in ids:
        truth.get(b)
    if simulator is None:
        simulator = RemovalSimulator([truth], cfg, thresholds)
    elif simulator.k != 1:
        raise InvalidInput("validation needs a one-world simulator")
    outcomes = []
    done: list = []
    collapsed: frozenset = frozenset()
    for box in ids:
        try:
            outcome = simulator.attempt(done, box).per_sample[0]
        except SampleError as exc:
            raise exc.error from exc
        outcomes.append(outcome)
        done.append(box)
        if outcome.classification == Classification.COLLAPSE:
            collapsed = frozenset(outcome.collapsed_boxes)
            break
    success = not collapsed
    return ExecutionReport(success, len(done), collapsed, len(done) * cfg.per_pick_cost, outcomes)
