"""JSON schemas for every file the CLI reads or writes, keyed by the ``kind`` field."""
from __future__ import annotations

import json
from pathlib import Path

import jsonschema

from .errors import InvalidInput

NUM = {"type": "number"}
VEC3 = {"type": "array", "items": NUM, "minItems": 3, "maxItems": 3}
QUAT = {"type": "array", "items": NUM, "minItems": 4, "maxItems": 4}
NUM_OR_NULL = {"type": ["number", "null"]}
STR_OR_NULL = {"type": ["string", "null"]}


def _doc(kind: str, props: dict, required: list) -> dict:
    return {"$schema": "https://json-schema.org/draft/2020-12/schema",
            "type": "object",
            "properties": {"schema_version": {"const": 1}, "kind": {"const": kind}, **props},
            "required": ["schema_version", "kind"] + required}


SHELF = {"type": "object",
         "properties": {"w": NUM, "h": NUM, "d": NUM, "wall_thickness": NUM,
                        "side_walls": {"type": "boolean"}},
         "required": ["w", "h", "d"]}

BOX = {"type": "object",
       "properties": {"id": {"type": "string"}, "half_extents": VEC3, "position": VEC3,
                      "yaw": NUM, "orientation": QUAT, "removed": {"type": "boolean"}},
       "required": ["id", "half_extents", "position", "yaw"], "additionalProperties": False}

SCENE_BODY = {"shelf": SHELF, "boxes": {"type": "array", "items": BOX}}

CAMERA = {"type": "object",
          "properties": {"fx": NUM, "fy": NUM, "cx": NUM, "cy": NUM, "shelf_distance": NUM,
                         "axis_point": {"type": "array", "items": NUM, "minItems": 2,
                                        "maxItems": 2}},
          "required": ["fx", "fy", "cx", "cy", "shelf_distance"]}

PIXEL_OBS = {"type": "object",
             "properties": {"id": {"type": "string"},
                            "rect_center_px": {"type": "array", "items": NUM, "minItems": 2,
                                               "maxItems": 2},
                            "rect_size_px": {"type": "array", "items": NUM, "minItems": 2,
                                             "maxItems": 2},
                            "rect_angle": NUM, "centroid_depth": NUM},
             "required": ["id", "rect_center_px", "rect_size_px", "rect_angle",
                          "centroid_depth"]}

METRIC_OBS = {"type": "object",
              "properties": {"id": {"type": "string"},
                             "center": {"type": "array", "items": NUM, "minItems": 2,
                                        "maxItems": 2},
                             "size": {"type": "array", "items": NUM, "minItems": 2,
                                      "maxItems": 2},
                             "yaw": NUM, "z_front": NUM},
              "required": ["id", "center", "size"]}

OBS_BODY = {"shelf": SHELF, "camera": CAMERA,
            "boxes": {"type": "array", "minItems": 1,
                      "items": {"anyOf": [PIXEL_OBS, METRIC_OBS]}}}

OUTCOME = {"type": "object",
           "properties": {"removed": {"type": "string"},
                          "classification": {"enum": ["SAFE", "MINOR_SHIFT", "COLLAPSE"]},
                          "collapsed_boxes": {"type": "array", "items": {"type": "string"}},
                          "first_collapsed": STR_OR_NULL,
                          "max_displacement": {"type": "object",
                                               "additionalProperties": NUM}},
           "required": ["removed", "classification", "collapsed_boxes", "first_collapsed"]}

SUMMARY = {"type": "object",
           "properties": {"runs": {"type": "integer", "minimum": 0},
                          "success_rate": {"type": "number", "minimum": 0, "maximum": 1},
                          "avg_boxes_removed": NUM, "avg_est_time_s": NUM},
           "required": ["runs", "success_rate", "avg_boxes_removed", "avg_est_time_s"]}

SCHEMAS = {
    "scene": _doc("scene", SCENE_BODY, ["shelf", "boxes"]),
    "observation": _doc("observation", OBS_BODY, ["shelf", "boxes"]),
    "plan": _doc("plan", {
        "approach": {"enum": ["physics", "heuristic"]},
        "task": {"enum": ["extract", "clear"]},
        "target": STR_OR_NULL,
        "actions": {"type": "array", "items": {
            "type": "object",
            "properties": {"box_id": {"type": "string"},
                           "predicted_safe": {"type": ["boolean", "null"]},
                           "predicted_collapse_free": {"type": "boolean"}},
            "required": ["box_id"]}},
        "stats": {"type": "object",
                  "properties": {"simulations_run": {"type": "integer", "minimum": 0},
                                 "planning_time_s": NUM_OR_NULL,
                                 "passes": {"type": "integer", "minimum": 0}}}},
        ["approach", "task", "actions"]),
    "execution_report": _doc("execution_report", {
        "success": {"type": "boolean"},
        "boxes_removed": {"type": "integer", "minimum": 0},
        "collapsed_during_execution": {"type": "array", "items": {"type": "string"}},
        "estimated_time_s": NUM,
        "outcomes": {"type": "array", "items": OUTCOME}},
        ["success", "boxes_removed", "collapsed_during_execution", "estimated_time_s"]),
    "bench_report": _doc("bench_report", {
        "task": {"enum": ["extract", "clear"]},
        "corpus": {"type": "object"},
        "physics": SUMMARY, "heuristic": SUMMARY,
        "success_rate_delta_pp": NUM,
        "efficiency_improvement_pct": NUM_OR_NULL,
        "errors": {"type": "array"}},
        ["task", "physics", "heuristic", "success_rate_delta_pp", "efficiency_improvement_pct"]),
    "fixture": _doc("fixture", {
        "name": {"type": "string"}, "target": {"type": "string"},
        "scene": _doc("scene", SCENE_BODY, ["shelf", "boxes"]),
        "observation": _doc("observation", OBS_BODY, ["shelf", "boxes"])},
        ["name", "target", "scene", "observation"]),
    "config": _doc("config", {"sim": {"type": "object"}, "thresholds": {"type": "object"},
                              "k": {"type": "integer", "minimum": 1}}, []),
    "trajectory_header": _doc("trajectory_header", {
        "shelf": SHELF,
        "boxes": {"type": "array", "items": {
            "type": "object", "properties": {"id": {"type": "string"}, "half_extents": VEC3},
            "required": ["id", "half_extents"]}},
        "timestep": NUM, "thresholds": {"type": "object"},
        "plan": {"type": "array", "items": {"type": "string"}}, "target": STR_OR_NULL},
        ["shelf", "boxes", "timestep"]),
    "step": {"type": "object",
             "properties": {"kind": {"const": "step"}, "step": {"type": "integer", "minimum": 0},
                            "t": NUM, "removing": {"type": "string"},
                            "boxes": {"type": "array", "items": {
                                "type": "object",
                                "properties": {"id": {"type": "string"}, "p": VEC3, "q": QUAT,
                                               "speed": NUM},
                                "required": ["id", "p", "q"]}}},
             "required": ["kind", "step", "t", "removing", "boxes"]},
    "removal_outcome": {**OUTCOME, "properties": {"kind": {"const": "removal_outcome"},
                                                  **OUTCOME["properties"]}},
}


def validate_document(doc) -> str:
    """Validate one JSON document against the schema its ``kind`` names; returns the kind."""
    if not isinstance(doc, dict) or doc.get("kind") not in SCHEMAS:
        kind = doc.get("kind") if isinstance(doc, dict) else None
        raise InvalidInput(f"unknown document kind {kind!r}")
    try:
        jsonschema.validate(doc, SCHEMAS[doc["kind"]])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise InvalidInput(f"{doc['kind']}: {where}: {exc.message}") from None
    return doc["kind"]


def check_file(path) -> list:
    """Validate a .json document or every line of a .jsonl dump; returns the kinds seen."""
    text = Path(path).read_text()
    try:
        if str(path).endswith(".jsonl"):
            docs = [json.loads(line) for line in text.splitlines() if line.strip()]
        else:
            docs = [json.loads(text)]
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"{path}: not valid JSON ({exc.msg})") from None
    if not docs:
        raise InvalidInput(f"{path}: empty file")
    return [validate_document(d) for d in docs]
