"""Removal simulation protocol, outcome classification and Monte Carlo aggregation."""
from __future__ import annotations

import zlib
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from . import _kernels as K
from .errors import InsufficientHistory, InvalidInput, SampleError, StackPlanError
from .physics import SimConfig, Trace, World


class Classification(str, Enum):
    SAFE = "SAFE"
    MINOR_SHIFT = "MINOR_SHIFT"
    COLLAPSE = "COLLAPSE"


@dataclass(frozen=True)
class CollapseThresholds:
    linear_speed: float = 0.10
    angular_speed: float = 0.50
    displacement: float = 0.02
    sustain_steps: int = 12
    # displacements at or below this count as solver noise, not a shift
    slop: float = 0.002

    def __post_init__(self):
        if min(self.linear_speed, self.angular_speed, self.displacement,
               self.sustain_steps, self.slop) <= 0:
            raise InvalidInput("collapse thresholds must be positive")

    def to_dict(self) -> dict:
        return {"linear_speed": self.linear_speed, "angular_speed": self.angular_speed,
                "displacement": self.displacement, "sustain_steps": self.sustain_steps,
                "slop": self.slop}


@dataclass
class RemovalHistory:
    """What the monitor saw from the start of an extraction to the end of monitoring."""
    ids: list
    driven: str
    active: np.ndarray
    start_positions: np.ndarray
    trace: Trace
    required_steps: int
    rested: bool = False


@dataclass(frozen=True)
class RemovalOutcome:
    removed: str
    classification: Classification
    collapsed_boxes: tuple = ()
    first_collapsed: Optional[str] = None
    max_displacement: dict = field(default_factory=dict)

    def __post_init__(self):
        if (self.classification == Classification.COLLAPSE) != bool(self.collapsed_boxes):
            raise InvalidInput("COLLAPSE must coincide with a nonempty collapse list")
        head = self.collapsed_boxes[0] if self.collapsed_boxes else None
        if self.first_collapsed != head:
            raise InvalidInput("first_collapsed must be the head of collapsed_boxes")

    def to_dict(self) -> dict:
        return {"removed": self.removed, "classification": self.classification.value,
                "collapsed_boxes": list(self.collapsed_boxes),
                "first_collapsed": self.first_collapsed,
                "max_displacement": {k: round(v, 9) for k, v in self.max_displacement.items()}}

    @classmethod
    def from_dict(cls, data: dict) -> "RemovalOutcome":
        return cls(data["removed"], Classification(data["classification"]),
                   tuple(data.get("collapsed_boxes", ())), data.get("first_collapsed"),
                   dict(data.get("max_displacement", {})))


@dataclass(frozen=True)
class AggregatedOutcome:
    per_sample: tuple
    safe: bool
    collapse_union: frozenset
    first_collapsed_mode: Optional[str]

    @classmethod
    def from_outcomes(cls, outcomes: Sequence[RemovalOutcome]) -> "AggregatedOutcome":
        outcomes = tuple(outcomes)
        if not outcomes:
            raise InvalidInput("at least one sample outcome is required")
        safe = all(o.classification == Classification.SAFE for o in outcomes)
        union = frozenset(b for o in outcomes for b in o.collapsed_boxes)
        ranked = _rank_first_collapsed(outcomes)
        return cls(outcomes, safe, union, ranked[0] if ranked else None)

    @property
    def collapse_detected(self) -> bool:
        return any(o.classification == Classification.COLLAPSE for o in self.per_sample)

    @property
    def collapse_count(self) -> int:
        """Number of samples classified COLLAPSE."""
        return sum(o.classification == Classification.COLLAPSE for o in self.per_sample)

    def ranked_first_collapsed(self) -> list:
        return _rank_first_collapsed(self.per_sample)

    def ranked_collapsed(self) -> list:
        """First-collapsed ids as ranked above, then every other collapsed id by
        how many samples it fell in; ties go to the earliest (sample, position)."""
        head = _rank_first_collapsed(self.per_sample)
        counts = Counter(b for o in self.per_sample for b in o.collapsed_boxes)
        order = {}
        for i, o in enumerate(self.per_sample):
            for j, b in enumerate(o.collapsed_boxes):
                order.setdefault(b, (i, j))
        rest = sorted((b for b in counts if b not in head), key=lambda b: (-counts[b], order[b]))
        return head + rest

    def to_dict(self) -> dict:
        return {"safe": self.safe, "collapse_detected": self.collapse_detected,
                "collapse_union": sorted(self.collapse_union),
                "first_collapsed_mode": self.first_collapsed_mode,
                "per_sample": [o.to_dict() for o in self.per_sample]}


def _rank_first_collapsed(outcomes) -> list:
    """First-collapsed ids by frequency; ties go to the one seen in the earliest sample."""
    firsts = [o.first_collapsed for o in outcomes if o.first_collapsed is not None]
    counts = Counter(firsts)
    order = {}
    for i, b in enumerate(firsts):
        order.setdefault(b, i)
    return sorted(counts, key=lambda b: (-counts[b], order[b]))


def _first_sustained(flags: np.ndarray, sustain: int) -> int:
    """Start index of the first run of ``sustain`` consecutive True values, or -1."""
    run = 0
    for t, f in enumerate(flags):
        run = run + 1 if f else 0
        if run >= sustain:
            return t - sustain + 1
    return -1


def detect(history: RemovalHistory, thresholds: CollapseThresholds = CollapseThresholds()
           ) -> RemovalOutcome:
    """Classify a monitored removal from its recorded history."""
    trace = history.trace
    if len(trace) < history.required_steps and not history.rested:
        raise InsufficientHistory(f"history holds {len(trace)} of {history.required_steps} steps")
    if len(trace) == 0:
        raise InsufficientHistory("empty history")
    crossings = []
    max_disp = {}
    shifted = False
    for i, bid in enumerate(history.ids):
        if bid == history.driven or not history.active[i]:
            continue
        disp = np.linalg.norm(trace.positions[:, i] - history.start_positions[i], axis=1)
        max_disp[bid] = float(disp.max())
        fast = (trace.speed[:, i] > thresholds.linear_speed) | \
            (trace.spin[:, i] > thresholds.angular_speed)
        when = _first_sustained(fast, thresholds.sustain_steps)
        if disp[-1] > thresholds.displacement:
            far = int(np.argmax(disp > thresholds.displacement))
            when = far if when < 0 else min(when, far)
        if when >= 0:
            crossings.append((when, i, bid))
        elif max_disp[bid] > thresholds.slop:
            shifted = True
    crossings.sort()
    collapsed = tuple(bid for _, _, bid in crossings)
    if collapsed:
        cls = Classification.COLLAPSE
    elif shifted:
        cls = Classification.MINOR_SHIFT
    else:
        cls = Classification.SAFE
    return RemovalOutcome(history.driven, cls, collapsed, collapsed[0] if collapsed else None,
                          max_disp)


def removal_seed(base_seed: int, prefix: Sequence[str], box: str) -> int:
    """Disturbance seed for removing ``box`` after the removals in ``prefix``.

    Depends only on the removal sequence so the planner's rollouts and the
    ground-truth validation of the same sequence see the same disturbances.
    """
    key = "\x1f".join(str(p) for p in prefix)
    ss = np.random.SeedSequence([int(base_seed) & 0xFFFFFFFFFFFFFFFF,
                                 zlib.crc32(key.encode()), zlib.crc32(str(box).encode())])
    return int(ss.generate_state(2, np.uint64)[0])


def run_removal(world: World, box: str, thresholds: CollapseThresholds = CollapseThresholds(),
                seed: Optional[int] = None, with_quats: bool = False):
    """Settle, pull ``box`` out under disturbances, monitor, classify.

    Leaves ``world`` in its post-removal state.  Returns (outcome, history).
    """
    cfg = world.config
    world.index(box)
    if seed is not None:
        world.reseed(seed)
    world.settle(cfg.settle_time, rest_exit=cfg.rest_exit)
    active = world.kind[:world.n_boxes] != K.KIND_REMOVED
    start = world.box_positions()
    trace = world.extract(box, disturb=True, record=True, with_quats=with_quats)
    monitor_steps = cfg.steps_for(cfg.monitor_time)
    _, status, tail = world.advance(monitor_steps, record=True, with_quats=with_quats,
                                    rest_exit=cfg.rest_exit)
    history = RemovalHistory(list(world.ids), box, active, start, trace.extend(tail),
                             len(trace) + monitor_steps, rested=status == K.STATUS_RESTED)
    return detect(history, thresholds), history


def _scene_of(sample):
    return getattr(sample, "scene", sample)


def simulate_removal(sample, box: str, cfg: Optional[SimConfig] = None,
                     thresholds: CollapseThresholds = CollapseThresholds()) -> RemovalOutcome:
    """Run the removal protocol on a private world; the sample is left untouched."""
    cfg = cfg or SimConfig()
    world = World(_scene_of(sample), cfg)
    outcome, _ = run_removal(world, box, thresholds, seed=removal_seed(cfg.rng_seed, (), box))
    return outcome


def simulate_removal_mc(samples, box: str, cfg: Optional[SimConfig] = None,
                        thresholds: CollapseThresholds = CollapseThresholds()
                        ) -> AggregatedOutcome:
    if not samples:
        raise InvalidInput("at least one sample is required")
    outcomes = []
    for i, s in enumerate(samples):
        try:
            outcomes.append(simulate_removal(s, box, cfg, thresholds))
        except StackPlanError as exc:
            if isinstance(exc, (InvalidInput,)) or hasattr(exc, "box_id"):
                raise
            raise SampleError(i, exc) from exc
    return AggregatedOutcome.from_outcomes(outcomes)
