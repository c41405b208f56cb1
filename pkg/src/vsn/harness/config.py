"""Scenario configuration: JSON schema, validation and typed view."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from ..physnode import Environment, Fire, NodeKind, PhysicalNode
from ..simkernel import LinkModel, ms, seconds
from ..vruntime import AppTask, RateScaledReporting, condition_from_json


class ConfigInvalid(Exception):
    pass


_num = {"type": "number"}
_nonneg = {"type": "number", "minimum": 0}
_point = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}
_path = {"type": "array", "items": {"type": "string", "minLength": 1}, "minItems": 1}

LINK_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "propagation_ms": _nonneg,
        "processing_ms": _nonneg,
        "session_setup_ms": _nonneg,
        "jitter_max_ms": _nonneg,
        "jitter_seed": {"type": "integer", "minimum": 0},
    },
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["nodes", "applications", "tasks"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "duration_s": {"type": "number", "exclusiveMinimum": 0},
        "iterations": {"type": "integer", "minimum": 1},
        "baseline_mode": {"type": "boolean"},
        "link": LINK_SCHEMA,
        "gi_link": LINK_SCHEMA,
        "overlay": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"preconfig_ms": _nonneg, "frame_cost_ms": _nonneg},
        },
        "fca": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lambda_max": {"type": "number", "exclusiveMinimum": 0},
                "radius_m": {"type": "number", "exclusiveMinimum": 0},
                "window_s": {"type": "number", "exclusiveMinimum": 0},
                "compute_ms": _nonneg,
                "debounce_s": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "environment": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "ambient_c": _num,
                "fire": {
                    "type": ["object", "null"],
                    "required": ["origin", "start_s", "intensity_c", "falloff_radius_m"],
                    "additionalProperties": False,
                    "properties": {
                        "origin": _point,
                        "start_s": _nonneg,
                        "intensity_c": _nonneg,
                        "falloff_radius_m": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
            },
        },
        "nodes": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "kind", "position"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "string", "minLength": 1, "pattern": "^[A-Za-z0-9_.:-]+$"},
                    "kind": {"enum": [k.value for k in NodeKind]},
                    "position": _point,
                    "gto": {"type": "string"},
                    "max_tasks": {"type": "integer", "minimum": 1},
                    "owner": {"type": "string"},
                    "quantities": {"type": "array", "items": {"type": "string"}},
                    "dialect": {"enum": ["kv", "binary"]},
                },
            },
        },
        "applications": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "service"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "string", "minLength": 1, "pattern": "^[A-Za-z0-9_.:-]+$"},
                    "service": {"type": "string", "minLength": 1},
                    "role": {"enum": ["fire-contour", "monitor"]},
                    "fire_task": {"type": "string"},
                    "start_s": _nonneg,
                },
            },
        },
        "tasks": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["task_id", "app", "nodes", "period_s", "path"],
                "additionalProperties": False,
                "properties": {
                    "task_id": {"type": "string", "minLength": 1, "pattern": "^[A-Za-z0-9_.:-]+$"},
                    "app": {"type": "string"},
                    "nodes": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                    "quantity": {"type": "string"},
                    "period_s": {"type": "number", "exclusiveMinimum": 0},
                    "priority": {"type": "integer", "minimum": 0},
                    "report": {
                        "type": "object",
                        "required": ["kind"],
                        "properties": {"kind": {"enum": ["Always", "ThresholdAbove"]}, "value": _num},
                    },
                    "rate_scale": {
                        "type": "object",
                        "required": ["baseline_c", "span_c"],
                        "additionalProperties": False,
                        "properties": {"baseline_c": _num,
                                       "span_c": {"type": "number", "exclusiveMinimum": 0}},
                    },
                    "path": _path,
                },
            },
        },
        "control": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["at_s", "app", "verb", "target"],
                "additionalProperties": False,
                "properties": {
                    "at_s": _nonneg,
                    "app": {"type": "string"},
                    "verb": {"enum": ["SetPriority", "SetPeriod", "RemoveTask"]},
                    "target": {"type": "string"},
                    "args": {"type": "object"},
                },
            },
        },
    },
}


def _link(obj: dict | None) -> LinkModel:
    obj = obj or {}
    return LinkModel(
        propagation_delay=ms(obj.get("propagation_ms", 0)),
        processing_delay=ms(obj.get("processing_ms", 0)),
        session_setup_delay=ms(obj.get("session_setup_ms", 0)),
        jitter_max=ms(obj.get("jitter_max_ms", 0)),
        jitter_seed=int(obj.get("jitter_seed", 0)),
    )


@dataclass(frozen=True)
class NodeSpec:
    node: PhysicalNode
    owner: str
    quantities: tuple[str, ...]
    dialect: str


@dataclass(frozen=True)
class AppSpec:
    id: str
    service: str
    role: str
    fire_task: str | None
    start: int


@dataclass(frozen=True)
class TaskSpec:
    task: AppTask
    nodes: tuple[str, ...]
    path: tuple[str, ...]


@dataclass(frozen=True)
class ControlSpec:
    at: int
    app: str
    verb: str
    target: str
    args: dict


@dataclass
class ScenarioConfig:
    raw: dict
    name: str
    seed: int
    duration: int
    iterations: int
    baseline_mode: bool
    link: LinkModel
    gi_link: LinkModel | None
    preconfig_cost: int
    frame_cost: int
    lambda_max: float
    radius: float
    window: int
    compute_cost: int
    debounce: int | None
    environment: Environment
    nodes: list[NodeSpec]
    apps: list[AppSpec]
    tasks: list[TaskSpec]
    control: list[ControlSpec] = field(default_factory=list)

    def with_overrides(self, **changes) -> "ScenarioConfig":
        """Re-validate a copy of the raw document with top-level fields replaced."""
        raw = copy.deepcopy(self.raw)
        raw.update(changes)
        return parse_config(raw)

    @property
    def node_kinds(self) -> dict[str, NodeKind]:
        return {n.node.id: n.node.kind for n in self.nodes}


def validate_document(doc) -> None:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigInvalid(f"{where}: {exc.message}") from None


def parse_config(doc) -> ScenarioConfig:
    validate_document(doc)
    doc = copy.deepcopy(doc)
    try:
        fire_doc = doc.get("environment", {}).get("fire")
        fire = None
        if fire_doc:
            fire = Fire(tuple(fire_doc["origin"]), seconds(fire_doc["start_s"]),
                        float(fire_doc["intensity_c"]), float(fire_doc["falloff_radius_m"]))
        env = Environment(float(doc.get("environment", {}).get("ambient_c", 20.0)), fire)

        nodes = []
        for n in doc["nodes"]:
            kind = NodeKind(n["kind"])
            default_q = () if kind is NodeKind.GTO else ("temperature",)
            nodes.append(NodeSpec(
                PhysicalNode(n["id"], kind, tuple(n["position"]), n.get("gto"), n.get("max_tasks")),
                n.get("owner", ""), tuple(n.get("quantities", default_q)), n.get("dialect", "kv"),
            ))
        ids = [n.node.id for n in nodes]
        if len(set(ids)) != len(ids):
            raise ConfigInvalid("duplicate node ids")
        by_id = {n.node.id: n.node for n in nodes}
        for n in nodes:
            if n.node.kind is NodeKind.TYPE_A:
                gto = by_id.get(n.node.gto_ref)
                if gto is None or gto.kind is NodeKind.TYPE_A:
                    raise ConfigInvalid(f"{n.node.id}: gto {n.node.gto_ref!r} must be a Gto/TypeB node")

        apps = []
        for a in doc["applications"]:
            if a["id"] in by_id:
                raise ConfigInvalid(f"application id {a['id']} collides with a node id")
            role = a.get("role", "monitor")
            if role == "fire-contour" and not a.get("fire_task"):
                raise ConfigInvalid(f"{a['id']}: fire-contour role needs fire_task")
            apps.append(AppSpec(a["id"], a["service"], role, a.get("fire_task"), seconds(a.get("start_s", 0))))
        app_ids = {a.id for a in apps}
        if len(app_ids) != len(apps):
            raise ConfigInvalid("duplicate application ids")

        tasks = []
        seen = set()
        for t in doc["tasks"]:
            if t["app"] not in app_ids:
                raise ConfigInvalid(f"task {t['task_id']}: unknown app {t['app']}")
            for node in t["nodes"]:
                if node not in by_id:
                    raise ConfigInvalid(f"task {t['task_id']}: unknown node {node}")
                if by_id[node].kind is NodeKind.GTO:
                    raise ConfigInvalid(f"task {t['task_id']}: {node} is a gateway without sensors")
                if (node, t["task_id"]) in seen:
                    raise ConfigInvalid(f"task {t['task_id']} placed twice on {node}")
                seen.add((node, t["task_id"]))
            rs = t.get("rate_scale")
            lambda_max = float(doc.get("fca", {}).get("lambda_max", 1.0))
            task = AppTask(
                t["task_id"], t["app"], t.get("quantity", "temperature"), seconds(t["period_s"]),
                int(t.get("priority", 0)), condition_from_json(t.get("report", {"kind": "Always"})),
                RateScaledReporting(lambda_max, float(rs["baseline_c"]), float(rs["span_c"])) if rs else None,
            )
            tasks.append(TaskSpec(task, tuple(t["nodes"]), tuple(t["path"])))
        per_node: dict[str, int] = {}
        for ts in tasks:
            for node in ts.nodes:
                per_node[node] = per_node.get(node, 0) + 1
        for node, count in per_node.items():
            if count > by_id[node].max_tasks:
                raise ConfigInvalid(f"{node}: {count} tasks exceed max_tasks={by_id[node].max_tasks}")
        for a in apps:
            if a.role == "fire-contour" and not any(ts.task.task_id == a.fire_task and ts.task.app_id == a.id
                                                    for ts in tasks):
                raise ConfigInvalid(f"{a.id}: fire_task {a.fire_task} is not one of its tasks")

        control = []
        for c in doc.get("control", []):
            if c["app"] not in app_ids or c["target"] not in by_id:
                raise ConfigInvalid(f"control entry {c!r} names an unknown app or node")
            control.append(ControlSpec(seconds(c["at_s"]), c["app"], c["verb"], c["target"], c.get("args", {})))

        fca = doc.get("fca", {})
        overlay = doc.get("overlay", {})
        return ScenarioConfig(
            raw=doc,
            name=doc.get("name", "scenario"),
            seed=int(doc.get("seed", 0)),
            duration=seconds(doc.get("duration_s", 60)),
            iterations=int(doc.get("iterations", 1)),
            baseline_mode=bool(doc.get("baseline_mode", False)),
            link=_link(doc.get("link")),
            gi_link=_link(doc["gi_link"]) if "gi_link" in doc else None,
            preconfig_cost=ms(overlay.get("preconfig_ms", 0)),
            frame_cost=ms(overlay.get("frame_cost_ms", 0)),
            lambda_max=float(fca.get("lambda_max", 1.0)),
            radius=float(fca.get("radius_m", 500.0)),
            window=seconds(fca.get("window_s", 100)),
            compute_cost=ms(fca.get("compute_ms", 0)),
            debounce=seconds(fca["debounce_s"]) if "debounce_s" in fca else None,
            environment=env,
            nodes=nodes,
            apps=apps,
            tasks=tasks,
            control=control,
        )
    except ConfigInvalid:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigInvalid(str(exc)) from None


def load_config(path) -> ScenarioConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigInvalid(f"{path}: {exc}") from None
    return parse_config(doc)
