"""Command-line interface.

Exit codes: 0 ok, 1 validation failure (a collapse while executing a plan),
2 bad input, 3 planning failure.  ``--config`` (or the STACKPLAN_CONFIG
environment variable) names a JSON file of defaults:
``{"schema_version": 1, "kind": "config", "sim": {...}, "thresholds": {...}, "k": 10}``.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .bench import CorpusKind, CorpusSpec, Task, generate_scene, run_benchmark, scene_id
from .collapse import CollapseThresholds
from .errors import (InvalidInput, PlanNotFound, SceneGenerationFailed, StackPlanError,
                     UnclearableResidue)
from .fixtures import NAMES, fixture_document
from .physics import SimConfig
from .planners import (plan_clearance_heuristic, plan_clearance_physics,
                       plan_extraction_heuristic, plan_extraction_physics, validate_plan,
                       ActionPlan)
from .reconstruct import ObservationSet, observe_scene
from .render import RenderSpec, read_trajectory, record_removals, render_frames, write_jsonl
from .scene_model import Scene
from .schemas import SCHEMAS, check_file, validate_document

EXIT_OK, EXIT_FAILED, EXIT_INPUT, EXIT_PLAN = 0, 1, 2, 3
CONFIG_ENV = "STACKPLAN_CONFIG"


class InputError(Exception):
    """Bad command-line input; exits with code 2."""


@dataclasses.dataclass(frozen=True)
class Settings:
    sim: SimConfig
    thresholds: CollapseThresholds
    k: int


def load_settings(path=None, seed=None, k=None) -> Settings:
    path = path or os.environ.get(CONFIG_ENV)
    doc = {}
    if path:
        doc = _read_json(path)
        if doc.get("kind") != "config":
            raise InputError(f"{path}: not a config file")
        validate_document(doc)
    sim = dict(doc.get("sim", {}))
    if seed is not None:
        sim["rng_seed"] = seed
    try:
        cfg = SimConfig.from_dict(sim)
        thr = CollapseThresholds(**doc.get("thresholds", {}))
    except TypeError as exc:
        raise InputError(f"bad thresholds: {exc}") from None
    k = k if k is not None else int(doc.get("k", 10))
    if k < 1:
        raise InputError("k must be at least 1")
    return Settings(cfg, thr, k)


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise InputError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not valid JSON ({exc.msg})") from None


def _write_json(path, doc) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2) + "\n")


def read_scene(path) -> Scene:
    """A scene file, or the truth scene inside a fixture file."""
    doc = _read_json(path)
    if doc.get("kind") == "fixture":
        doc = doc["scene"]
    validate_document(doc)
    if doc["kind"] != "scene":
        raise InputError(f"{path}: expected a scene, got {doc['kind']!r}")
    return Scene.from_dict(doc)


def read_observation(path):
    """(observation, default target) from an observation, fixture or scene file."""
    doc = _read_json(path)
    target = None
    if doc.get("kind") == "fixture":
        target = doc.get("target")
        doc = doc["observation"]
    validate_document(doc)
    if doc["kind"] == "scene":
        return observe_scene(Scene.from_dict(doc)), target
    if doc["kind"] != "observation":
        raise InputError(f"{path}: expected an observation, got {doc['kind']!r}")
    return ObservationSet.from_dict(doc), target


def read_plan(path) -> ActionPlan:
    doc = _read_json(path)
    validate_document(doc)
    if doc["kind"] != "plan":
        raise InputError(f"{path}: expected a plan, got {doc['kind']!r}")
    return ActionPlan.from_dict(doc)


# -- commands --------------------------------------------------------------

def cmd_gen(args, settings: Settings) -> int:
    lo, hi = (args.boxes, args.boxes) if args.boxes else (args.min_boxes, args.max_boxes)
    spec = CorpusSpec(kind=CorpusKind(args.kind), n_scenes=args.scenes,
                      boxes_per_scene=(lo, hi), seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(spec.n_scenes):
        try:
            truth, obs = generate_scene(spec, i, settings.sim)
        except SceneGenerationFailed as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INPUT
        sid = scene_id(spec, i)
        _write_json(out / f"{sid}.scene.json", truth.to_dict())
        _write_json(out / f"{sid}.obs.json", obs.to_dict())
    print(f"wrote {spec.n_scenes} scene/observation pairs to {out}")
    return EXIT_OK


def cmd_plan(args, settings: Settings) -> int:
    obs, default_target = read_observation(args.observation)
    target = args.target or (default_target if args.task == "extract" else None)
    if args.task == "extract" and not target:
        raise InputError("--target is required for --task extract")
    if args.task == "clear" and args.target:
        raise InputError("--target is only valid with --task extract")
    cfg, thr, k = settings.sim, settings.thresholds, settings.k
    try:
        if args.approach == "heuristic":
            plan = plan_extraction_heuristic(obs, target) if args.task == "extract" \
                else plan_clearance_heuristic(obs)
        elif args.task == "extract":
            plan = plan_extraction_physics(obs, target, cfg, thr, k)
        else:
            plan = plan_clearance_physics(obs, cfg, thr, k)
    except PlanNotFound as exc:
        print(f"planning failed: {exc}", file=sys.stderr)
        return EXIT_PLAN
    except UnclearableResidue as exc:
        print(f"planning failed: {exc}", file=sys.stderr)
        if args.out and exc.partial_plan is not None:
            _write_json(args.out, exc.partial_plan.to_dict(args.timing))
        return EXIT_PLAN
    if args.out:
        _write_json(args.out, plan.to_dict(args.timing))
    print(f"{plan.approach.value} {plan.task} plan, {len(plan)} action(s):")
    for n, a in enumerate(plan.actions, 1):
        safety = "n/a" if a.predicted is None else \
            ("safe" if a.predicted.safe else
             f"collapse in {a.predicted.collapse_count}/{len(a.predicted.per_sample)} samples"
             if a.predicted.collapse_detected else "minor shift")
        print(f"  {n}. {a.box_id}  predicted: {safety}")
    print(f"simulations run: {plan.simulations_run}")
    print(f"planning time: {plan.planning_time:.2f} s")
    return EXIT_OK


def cmd_validate(args, settings: Settings) -> int:
    truth = read_scene(args.scene)
    plan = read_plan(args.plan)
    report = validate_plan(truth, plan, settings.sim, settings.thresholds)
    doc = report.to_dict()
    if args.out:
        _write_json(args.out, doc)
        print(f"{'success' if report.success else 'failure'}: {report.boxes_removed} box(es) "
              f"removed, estimated {report.estimated_time:.0f} s")
    else:
        print(json.dumps(doc, indent=2))
    if not report.success:
        print(f"collapse during execution: {', '.join(sorted(report.collapsed_during_execution))}",
              file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def cmd_simulate(args, settings: Settings) -> int:
    truth = read_scene(args.scene)
    if args.plan:
        plan = read_plan(args.plan)
        ids, target = plan.box_ids, plan.target
    else:
        ids, target = list(args.remove or []), None
    if not ids:
        raise InputError("give --remove ids or --plan")
    lines = record_removals(truth, ids, settings.sim, settings.thresholds, target)
    if args.trajectory:
        write_jsonl(lines, args.trajectory)
    outcomes = [line for line in lines if line["kind"] == "removal_outcome"]
    for o in outcomes:
        extra = f" collapsed: {', '.join(o['collapsed_boxes'])}" if o["collapsed_boxes"] else ""
        print(f"{o['removed']}: {o['classification']}{extra}")
    return EXIT_OK


def cmd_bench(args, settings: Settings) -> int:
    lo, hi = (args.boxes, args.boxes) if args.boxes else (args.min_boxes, args.max_boxes)
    corpus = CorpusSpec(kind=CorpusKind(args.kind), n_scenes=args.scenes,
                        boxes_per_scene=(lo, hi), seed=args.seed)

    def progress(done, total):
        if args.progress:
            print(f"\r{done}/{total} scenes", end="", file=sys.stderr, flush=True)

    report = run_benchmark(corpus, Task(args.task), settings.sim, settings.thresholds,
                           settings.k, args.workers, progress)
    if args.progress:
        print(file=sys.stderr)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench.csv").write_text(report.to_csv(args.timing))
    _write_json(out / "summary.json", report.to_dict())
    for name, s in (("physics", report.physics), ("heuristic", report.heuristic)):
        print(f"{name:9s} runs={s.runs} success={100 * s.success_rate:.1f}% "
              f"boxes={s.avg_boxes_removed:.2f} time={s.avg_est_time_s:.2f}s")
    eff = report.efficiency_improvement
    print(f"success delta: {report.success_rate_delta:+.1f} pp; efficiency improvement: "
          + ("n/a" if eff is None else f"{eff:.2f}%"))
    return EXIT_OK


def cmd_render(args, settings: Settings) -> int:
    traj = read_trajectory(args.trajectory)
    paths = render_frames(traj, args.out, RenderSpec(frame_stride=args.frame_stride))
    note = " (truncated input)" if traj.truncated else ""
    print(f"wrote {len(paths)} frame(s) to {args.out}{note}")
    return EXIT_OK


def cmd_check(args, settings: Settings) -> int:
    for path in args.files:
        kinds = check_file(path)
        summary = kinds[0] if len(kinds) == 1 else f"{len(kinds)} records"
        print(f"{path}: ok ({summary})")
    return EXIT_OK


def cmd_schema(args, settings: Settings) -> int:
    print(json.dumps(SCHEMAS[args.kind], indent=2))
    return EXIT_OK


def cmd_fixtures(args, settings: Settings) -> int:
    out = Path(args.out)
    for name in NAMES:
        doc = fixture_document(name)
        _write_json(out / f"{name}.json", doc)
        _write_json(out / f"{name}.scene.json", doc["scene"])
        _write_json(out / f"{name}.obs.json", doc["observation"])
    print(f"wrote {len(NAMES)} fixtures to {out}")
    return EXIT_OK


def _corpus_flags(p) -> None:
    p.add_argument("--kind", choices=[k.value for k in CorpusKind], default="unstructured")
    p.add_argument("--scenes", type=int, default=1)
    p.add_argument("--boxes", type=int, help="exact box count per scene")
    p.add_argument("--min-boxes", type=int, default=CorpusSpec.boxes_per_scene[0])
    p.add_argument("--max-boxes", type=int, default=CorpusSpec.boxes_per_scene[1])
    p.add_argument("--seed", type=int, default=0, help="corpus seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stackplan", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help=f"JSON config file (default: ${CONFIG_ENV})")
    parser.add_argument("--sim-seed", type=int, help="override the simulation seed")
    parser.add_argument("-k", type=int, help="number of depth samples")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate scenes and their observations")
    _corpus_flags(p)
    p.add_argument("--out", default="scenes")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("plan", help="plan an extraction or a clearance")
    p.add_argument("observation", help="observation, scene or fixture file")
    p.add_argument("--task", choices=["extract", "clear"], default="extract")
    p.add_argument("--target")
    p.add_argument("--approach", choices=["physics", "heuristic"], default="physics")
    p.add_argument("--out", help="plan file to write")
    p.add_argument("--timing", action="store_true", help="store planning time in the file")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("validate", help="execute a plan on a ground-truth scene")
    p.add_argument("scene")
    p.add_argument("plan")
    p.add_argument("--out", help="report file to write")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("simulate", help="execute removals and dump the trajectory")
    p.add_argument("scene")
    p.add_argument("--remove", nargs="+")
    p.add_argument("--plan")
    p.add_argument("--trajectory", help="JSON lines dump to write")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="benchmark both planners on a generated corpus")
    _corpus_flags(p)
    p.add_argument("--task", choices=[t.value for t in Task], default="extract")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="bench_out")
    p.add_argument("--timing", action="store_true", help="fill the planning_time_s column")
    p.add_argument("--progress", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("render", help="SVG frames of a trajectory dump")
    p.add_argument("trajectory")
    p.add_argument("--out", default="frames")
    p.add_argument("--frame-stride", type=int, default=RenderSpec.frame_stride)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("check", help="validate files against their JSON schemas")
    p.add_argument("files", nargs="+")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("schema", help="print a JSON schema")
    p.add_argument("kind", choices=sorted(SCHEMAS))
    p.set_defaults(func=cmd_schema)

    p = sub.add_parser("fixtures", help="export the shipped fixture scenes")
    p.add_argument("--out", default="fixtures")
    p.set_defaults(func=cmd_fixtures)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = load_settings(args.config, args.sim_seed, args.k)
        return args.func(args, settings)
    except (InputError, InvalidInput, StackPlanError, OSError) as exc:
        # any remaining library error here stems from the inputs given
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
