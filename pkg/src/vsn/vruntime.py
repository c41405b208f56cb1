"""Virtual sensor layer: per-node task tables and the priority scheduler.

Every task deployed on a node becomes a :class:`VirtualSensor`. A tick
samples every due virtual sensor and emits in ascending priority number,
ties broken by task id. Priority never suppresses a due sample.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable

from .physnode import PhysicalLayer
from .simkernel import US_PER_S, Simulator
from .wirecodec import SenMLRecord


class TaskError(Exception):
    pass


class CapacityExceeded(TaskError):
    pass


class DuplicateTask(TaskError):
    pass


class UnknownTask(TaskError):
    pass


class BadTask(TaskError):
    pass


@dataclass(frozen=True)
class Always:
    def holds(self, value: float) -> bool:
        return True

    def to_json(self):
        return {"kind": "Always"}


@dataclass(frozen=True)
class ThresholdAbove:
    value: float

    def holds(self, value: float) -> bool:
        return value > self.value

    def to_json(self):
        return {"kind": "ThresholdAbove", "value": self.value}


def condition_from_json(obj) -> Always | ThresholdAbove:
    kind = obj.get("kind") if isinstance(obj, dict) else None
    if kind == "Always":
        return Always()
    if kind == "ThresholdAbove":
        return ThresholdAbove(float(obj["value"]))
    raise BadTask(f"unknown report condition {obj!r}")


@dataclass(frozen=True)
class RateScaledReporting:
    """Thin emissions so the report rate grows with the reading.

    Per tick a sample is kept with probability
    ``lambda_max * period_s * clamp((value - baseline) / span, 0, 1)``,
    so over a window the number of reports is close to Poisson with rate
    ``lambda_max * (value - baseline) / span``.
    """

    lambda_max: float
    baseline: float
    span: float

    def probability(self, value: float, period_us: int) -> float:
        frac = min(1.0, max(0.0, (value - self.baseline) / self.span))
        return min(1.0, self.lambda_max * (period_us / US_PER_S) * frac)

    def to_json(self):
        return {"lambda_max": self.lambda_max, "baseline": self.baseline, "span": self.span}


@dataclass(frozen=True)
class AppTask:
    task_id: str
    app_id: str
    quantity: str
    period: int  # microseconds
    priority: int = 0
    report_condition: Always | ThresholdAbove = Always()
    report_rate: RateScaledReporting | None = None

    def __post_init__(self):
        if self.period <= 0:
            raise BadTask(f"{self.task_id}: period must be > 0")
        if self.priority < 0:
            raise BadTask(f"{self.task_id}: priority must be >= 0")

    def to_json(self) -> dict:
        out = {
            "task_id": self.task_id,
            "app_id": self.app_id,
            "quantity": self.quantity,
            "period_us": self.period,
            "priority": self.priority,
            "report_condition": self.report_condition.to_json(),
        }
        if self.report_rate is not None:
            out["report_rate"] = self.report_rate.to_json()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "AppTask":
        try:
            rate = obj.get("report_rate")
            return cls(
                task_id=str(obj["task_id"]),
                app_id=str(obj["app_id"]),
                quantity=str(obj["quantity"]),
                period=int(obj["period_us"]),
                priority=int(obj.get("priority", 0)),
                report_condition=condition_from_json(obj.get("report_condition", {"kind": "Always"})),
                report_rate=RateScaledReporting(**rate) if rate else None,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise BadTask(f"bad task document: {exc}") from None


class VSState(str, Enum):
    DEPLOYED = "Deployed"
    RUNNING = "Running"
    SUSPENDED = "Suspended"


@dataclass
class VirtualSensor:
    vs_id: str
    host_node: str
    task: AppTask
    next_due: int
    rng: random.Random = field(repr=False)
    state: VSState = VSState.DEPLOYED

    @property
    def order_key(self):
        return (self.task.priority, self.task.task_id)


class NodeRuntime:
    """Task table of a single physical node."""

    def __init__(self, node_id: str, physical: PhysicalLayer, seed: int = 0):
        self.node_id = node_id
        self.physical = physical
        self.seed = seed
        self.sensors: dict[str, VirtualSensor] = {}
        # (at, [vs ids in dispatch order]) for every non-empty tick
        self.tick_log: list[tuple[int, list[str]]] = []
        # (task_id, at, value) for every emitted sample
        self.emissions: list[tuple[str, int, float]] = []

    @property
    def max_tasks(self) -> int:
        return self.physical[self.node_id].max_tasks

    def deploy_task(self, task: AppTask, at: int = 0) -> str:
        if task.task_id in self.sensors:
            raise DuplicateTask(f"{task.task_id} on {self.node_id}")
        if len(self.sensors) >= self.max_tasks:
            raise CapacityExceeded(f"{self.node_id} already runs {len(self.sensors)} tasks")
        vs_id = f"{self.node_id}/{task.task_id}"
        # per-sensor stream keeps thinning independent of neighbouring tasks
        rng = random.Random(f"{self.seed}/{self.node_id}/{task.task_id}")
        # ticks sit on the task's period grid, so equal-period tasks share ticks
        first = (at // task.period + 1) * task.period
        self.sensors[task.task_id] = VirtualSensor(vs_id, self.node_id, task, first, rng)
        return vs_id

    def _get(self, task_id: str) -> VirtualSensor:
        try:
            return self.sensors[task_id]
        except KeyError:
            raise UnknownTask(f"{task_id} on {self.node_id}") from None

    def set_priority(self, task_id: str, priority: int) -> None:
        vs = self._get(task_id)
        vs.task = replace(vs.task, priority=int(priority))

    def set_period(self, task_id: str, period: int) -> None:
        vs = self._get(task_id)
        vs.task = replace(vs.task, period=int(period))

    def remove_task(self, task_id: str) -> None:
        self._get(task_id)
        del self.sensors[task_id]

    def suspend(self, task_id: str) -> None:
        self._get(task_id).state = VSState.SUSPENDED

    def resume(self, task_id: str, at: int) -> None:
        vs = self._get(task_id)
        vs.state = VSState.RUNNING
        vs.next_due = max(vs.next_due, at + vs.task.period)

    def next_due(self) -> int | None:
        due = [vs.next_due for vs in self.sensors.values() if vs.state is not VSState.SUSPENDED]
        return min(due) if due else None

    def tick(self, at: int) -> list[tuple[str, SenMLRecord]]:
        due = sorted(
            (vs for vs in self.sensors.values()
             if vs.state is not VSState.SUSPENDED and vs.next_due <= at),
            key=lambda vs: vs.order_key,
        )
        if not due:
            return []
        self.tick_log.append((at, [vs.vs_id for vs in due]))
        out = []
        for vs in due:
            vs.state = VSState.RUNNING
            vs.next_due = at + vs.task.period
            record = self.physical.sample(self.node_id, vs.task.quantity, at)
            if not vs.task.report_condition.holds(record.value):
                continue
            rate = vs.task.report_rate
            # drawn on every passing sample so the stream depends only on this sensor
            draw = vs.rng.random()
            if rate is not None and draw >= rate.probability(record.value, vs.task.period):
                continue
            self.emissions.append((vs.task.task_id, at, record.value))
            out.append((vs.vs_id, record))
        return out


class VirtualSensorLayer:
    """All node runtimes of a deployment, addressed by node id."""

    def __init__(self, physical: PhysicalLayer, seed: int = 0):
        self.physical = physical
        self.seed = seed
        self.runtimes: dict[str, NodeRuntime] = {}

    def runtime(self, node_id: str) -> NodeRuntime:
        rt = self.runtimes.get(node_id)
        if rt is None:
            if node_id not in self.physical:
                raise KeyError(node_id)
            rt = self.runtimes[node_id] = NodeRuntime(node_id, self.physical, self.seed)
        return rt

    def deploy_task(self, node_id: str, task: AppTask, at: int = 0) -> str:
        return self.runtime(node_id).deploy_task(task, at)

    def tick(self, node_id: str, at: int):
        return self.runtime(node_id).tick(at)

    def set_priority(self, node_id: str, task_id: str, priority: int) -> None:
        self.runtime(node_id).set_priority(task_id, priority)

    def remove_task(self, node_id: str, task_id: str) -> None:
        self.runtime(node_id).remove_task(task_id)


class ScheduledRuntime:
    """Drives a :class:`NodeRuntime` from simulator timers.

    ``sink`` receives the non-empty output of every tick.
    """

    def __init__(self, sim: Simulator, runtime: NodeRuntime,
                 sink: Callable[[int, list[tuple[str, SenMLRecord]]], None]):
        self.sim = sim
        self.runtime = runtime
        self.sink = sink
        self._armed: set[int] = set()

    def arm(self) -> None:
        """Make sure a timer exists for the earliest due virtual sensor."""
        due = self.runtime.next_due()
        if due is None or due in self._armed:
            return
        self._armed.add(due)
        self.sim.call_at(max(due, self.sim.now), self.runtime.node_id, lambda: self._fire(due), "tick")

    def _fire(self, due: int) -> None:
        self._armed.discard(due)
        out = self.runtime.tick(self.sim.now)
        if out:
            self.sink(self.sim.now, out)
        self.arm()

    def deploy(self, task: AppTask) -> str:
        vs_id = self.runtime.deploy_task(task, self.sim.now)
        self.arm()
        return vs_id

    def set_period(self, task_id: str, period: int) -> None:
        self.runtime.set_period(task_id, period)
        self.arm()
