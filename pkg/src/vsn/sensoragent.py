"""Virtual sensor access layer.

A :class:`SensorAgent` lives on every Type B or GTO node. Toward
applications it speaks standard CoAP on two public channels: Di, which
pushes SenML-JSON measurement batches, and Ci, which carries JSON control
documents. Toward its nodes it speaks a proprietary dialect on PDi and PCi.
Type A nodes are reached over the Gi hop, driven by :class:`DelegatedNode`
on the Type A side.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from .channels import ChannelKind
from .physnode import NodeKind, PhysicalLayer
from .simkernel import Simulator
from .transport import Endpoint, Exchange, Inbound
from .vruntime import (AppTask, BadTask, CapacityExceeded, DuplicateTask, ScheduledRuntime,
                       UnknownTask, VirtualSensorLayer)
from .wirecodec import (CF_JSON, CF_OCTET_STREAM, CF_SENML_JSON, Code, SenMLRecord,
                        encode_senml)

__all__ = [
    "ChannelKind", "Verb", "ControlCommand", "SensorAgent", "DelegatedNode", "uri_for",
    "KeyValueDialect", "BinaryDialect", "DIALECTS",
]

log = logging.getLogger(__name__)


class AgentError(Exception):
    pass


class UnmanagedNode(AgentError):
    pass


class DialectError(AgentError):
    pass


class ProprietaryChannel(AgentError):
    pass


class MalformedCommand(AgentError):
    pass


def uri_for(agent_id: str, channel: ChannelKind, node: str) -> tuple[str, ...]:
    channel = ChannelKind(channel)
    if not channel.public:
        raise ProprietaryChannel(f"{channel.value} has no public URI")
    return ("agents", agent_id, "nodes", node, "di" if channel is ChannelKind.DI else "ci")


# -- control documents --------------------------------------------------------

class Verb(str, Enum):
    SET_PRIORITY = "SetPriority"
    SET_PERIOD = "SetPeriod"
    DEPLOY_TASK = "DeployTask"
    REMOVE_TASK = "RemoveTask"
    JOIN_OVERLAY = "JoinOverlay"


REQUIRED_ARGS = {
    Verb.SET_PRIORITY: ("task_id", "priority"),
    Verb.SET_PERIOD: ("task_id", "period_us"),
    Verb.DEPLOY_TASK: ("task",),
    Verb.REMOVE_TASK: ("task_id",),
    Verb.JOIN_OVERLAY: ("overlay_id", "service_name", "rendezvous"),
}


@dataclass(frozen=True)
class ControlCommand:
    verb: Verb
    target: str
    args: dict = field(default_factory=dict)

    def __post_init__(self):
        try:
            object.__setattr__(self, "verb", Verb(self.verb))
        except ValueError:
            raise MalformedCommand(f"unknown verb {self.verb!r}") from None
        if not isinstance(self.target, str) or not self.target:
            raise MalformedCommand("target must be a node id")
        if not isinstance(self.args, dict):
            raise MalformedCommand("args must be an object")
        missing = [a for a in REQUIRED_ARGS[self.verb] if a not in self.args]
        if missing:
            raise MalformedCommand(f"{self.verb.value} missing {', '.join(missing)}")

    def to_json(self) -> bytes:
        doc = {"verb": self.verb.value, "target": self.target, "args": self.args}
        return json.dumps(doc, separators=(",", ":"), sort_keys=True).encode()

    @classmethod
    def from_json(cls, data: bytes) -> "ControlCommand":
        try:
            doc = json.loads(bytes(data).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise MalformedCommand(str(exc)) from None
        if not isinstance(doc, dict) or set(doc) - {"verb", "target", "args"}:
            raise MalformedCommand("expected {verb, target, args}")
        return cls(doc.get("verb"), doc.get("target"), doc.get("args", {}))


# -- proprietary dialects -----------------------------------------------------

class KeyValueDialect:
    """Line-oriented ``key=value;...`` text, one line per sample."""

    name = "kv"

    def encode_data(self, items: list[tuple[str, SenMLRecord]]) -> bytes:
        lines = []
        for task_id, r in items:
            for part in (r.base_name, task_id, r.name, r.unit):
                if any(c in part for c in ";=\n"):
                    raise DialectError(f"unencodable field {part!r}")
            lines.append(f"node={r.base_name};task={task_id};q={r.name};u={r.unit};"
                         f"v={float(r.value)!r};t={float(r.time)!r}")
        return "\n".join(lines).encode()

    def decode_data(self, data: bytes) -> list[tuple[str, SenMLRecord]]:
        out = []
        try:
            for line in bytes(data).decode("utf-8").split("\n"):
                kv = dict(part.split("=", 1) for part in line.split(";"))
                out.append((kv["task"], SenMLRecord(kv["node"], kv["q"], kv["u"],
                                                    float(kv["v"]), float(kv["t"]))))
        except (UnicodeDecodeError, ValueError, KeyError) as exc:
            raise DialectError(f"kv data frame: {exc}") from None
        return out

    def encode_control(self, cmd: ControlCommand) -> bytes:
        args = json.dumps(cmd.args, separators=(",", ":"), sort_keys=True)
        return f"verb={cmd.verb.value}\ntarget={cmd.target}\nargs={args}".encode()

    def decode_control(self, data: bytes) -> ControlCommand:
        try:
            kv = dict(line.split("=", 1) for line in bytes(data).decode("utf-8").split("\n"))
            return ControlCommand(kv["verb"], kv["target"], json.loads(kv["args"]))
        except (UnicodeDecodeError, ValueError, KeyError, MalformedCommand) as exc:
            raise DialectError(f"kv control frame: {exc}") from None


class BinaryDialect:
    """Compact length-prefixed binary frames."""

    name = "binary"
    DATA_MAGIC = 0xB1
    CONTROL_MAGIC = 0xC1
    VERBS = list(Verb)

    @staticmethod
    def _str(s: str) -> bytes:
        raw = s.encode("utf-8")
        if len(raw) > 255:
            raise DialectError("string longer than 255 bytes")
        return bytes([len(raw)]) + raw

    @staticmethod
    def _read_str(data: bytes, pos: int) -> tuple[str, int]:
        n = data[pos]
        raw = data[pos + 1:pos + 1 + n]
        if len(raw) != n:
            raise DialectError("truncated string")
        return raw.decode("utf-8"), pos + 1 + n

    def encode_data(self, items: list[tuple[str, SenMLRecord]]) -> bytes:
        if len(items) > 255:
            raise DialectError("too many samples in one frame")
        out = bytearray([self.DATA_MAGIC, len(items)])
        for task_id, r in items:
            out += self._str(r.base_name) + self._str(task_id) + self._str(r.name) + self._str(r.unit)
            out += struct.pack(">dd", r.value, r.time)
        return bytes(out)

    def decode_data(self, data: bytes) -> list[tuple[str, SenMLRecord]]:
        data = bytes(data)
        try:
            if data[0] != self.DATA_MAGIC:
                raise DialectError("not a binary data frame")
            pos, out = 2, []
            for _ in range(data[1]):
                node, pos = self._read_str(data, pos)
                task, pos = self._read_str(data, pos)
                name, pos = self._read_str(data, pos)
                unit, pos = self._read_str(data, pos)
                value, time = struct.unpack_from(">dd", data, pos)
                pos += 16
                out.append((task, SenMLRecord(node, name, unit, value, time)))
        except (IndexError, struct.error, UnicodeDecodeError, ValueError) as exc:
            raise DialectError(f"binary data frame: {exc}") from None
        if pos != len(data):
            raise DialectError("trailing bytes in binary data frame")
        return out

    def encode_control(self, cmd: ControlCommand) -> bytes:
        args = json.dumps(cmd.args, separators=(",", ":"), sort_keys=True).encode()
        return bytes([self.CONTROL_MAGIC, self.VERBS.index(cmd.verb)]) + self._str(cmd.target) + args

    def decode_control(self, data: bytes) -> ControlCommand:
        data = bytes(data)
        try:
            if data[0] != self.CONTROL_MAGIC:
                raise DialectError("not a binary control frame")
            verb = self.VERBS[data[1]]
            target, pos = self._read_str(data, 2)
            return ControlCommand(verb, target, json.loads(data[pos:]))
        except (IndexError, UnicodeDecodeError, ValueError, MalformedCommand) as exc:
            raise DialectError(f"binary control frame: {exc}") from None


DIALECTS = {"kv": KeyValueDialect(), "binary": BinaryDialect()}


def apply_command(sched: ScheduledRuntime, cmd: ControlCommand) -> Code:
    """Run a node-level command against a node's task table."""
    rt = sched.runtime
    args = cmd.args
    try:
        if cmd.verb is Verb.SET_PRIORITY:
            rt.set_priority(str(args["task_id"]), int(args["priority"]))
            return Code.CHANGED
        if cmd.verb is Verb.SET_PERIOD:
            period = int(args["period_us"])
            if period <= 0:
                return Code.BAD_REQUEST
            sched.set_period(str(args["task_id"]), period)
            return Code.CHANGED
        if cmd.verb is Verb.DEPLOY_TASK:
            sched.deploy(AppTask.from_json(args["task"]))
            return Code.CREATED
        if cmd.verb is Verb.REMOVE_TASK:
            rt.remove_task(str(args["task_id"]))
            return Code.CHANGED
    except UnknownTask:
        return Code.NOT_FOUND
    except (CapacityExceeded, DuplicateTask, BadTask, TypeError, ValueError):
        return Code.BAD_REQUEST
    return Code.BAD_REQUEST


@dataclass(frozen=True)
class ReportTarget:
    app: str
    path: tuple[str, ...]
    overlay: str | None = None


class DelegatedNode:
    """Gi side of a Type A node: runs its task table, reports over Gi."""

    def __init__(self, sim: Simulator, physical: PhysicalLayer, vlayer: VirtualSensorLayer,
                 node_id: str, dialect: str = "kv"):
        self.sim = sim
        self.physical = physical
        self.node_id = node_id
        self.dialect = DIALECTS[dialect]
        self.endpoint = Endpoint(sim, node_id)
        self.sched = ScheduledRuntime(sim, vlayer.runtime(node_id), self._on_tick)
        self.endpoint.route(("gi", "pci"), self._on_pci)

    @property
    def gto(self) -> str:
        return self.physical[self.node_id].gto_ref

    def _via(self, dst, data, meta):
        self.physical.delegate_to_gto(self.sim, self.node_id, data, meta=meta)

    def _on_tick(self, at: int, out) -> None:
        items = [(vs_id.split("/", 1)[1], rec) for vs_id, rec in out]
        frame = self.dialect.encode_data(items)
        samples = [[rec.base_name, task, at] for task, rec in items]
        self.endpoint.request(self.gto, Code.POST, ("gi", "pdi"), frame, CF_OCTET_STREAM,
                              channel=ChannelKind.GI, meta={"kind": "data", "samples": samples},
                              via=self._via)

    def _on_pci(self, inbound: Inbound) -> None:
        try:
            cmd = self.dialect.decode_control(inbound.msg.payload)
        except DialectError:
            inbound.respond(Code.BAD_REQUEST)
            return
        if cmd.target != self.node_id:
            inbound.respond(Code.NOT_FOUND)
            return
        inbound.respond(apply_command(self.sched, cmd), meta={"kind": "control"})


class SensorAgent:
    """Access-layer agent on a Type B or GTO host."""

    def __init__(self, sim: Simulator, endpoint: Endpoint, physical: PhysicalLayer,
                 vlayer: VirtualSensorLayer, agent_id: str | None = None,
                 dialects: dict[str, str] | None = None):
        host = endpoint.node_id
        if physical[host].kind is NodeKind.TYPE_A:
            raise AgentError(f"{host}: Type A nodes cannot host an agent")
        self.sim = sim
        self.endpoint = endpoint
        self.physical = physical
        self.host = host
        self.agent_id = agent_id or host
        self.managed = [host] + physical.delegates_of(host)
        dialects = dialects or {}
        self.dialects = {n: DIALECTS[dialects.get(n, "kv")] for n in self.managed}
        self.host_runtime = ScheduledRuntime(sim, vlayer.runtime(host), self._on_local_tick)
        self.routes: dict[tuple[str, str], ReportTarget] = {}
        # (node, task_id) -> sample times (us) of every ingested record
        self.reports: dict[tuple[str, str], list[int]] = {}
        self.di_exchanges: list[Exchange] = []
        self.overlay_hook: Callable[[ControlCommand], Code] | None = None
        endpoint.route(("agents", self.agent_id, "nodes"), self._on_ci)
        endpoint.route(("gi", "pdi"), self._on_gi_data)

    def uri_for(self, channel: ChannelKind, node: str) -> tuple[str, ...]:
        return uri_for(self.agent_id, channel, node)

    def describe(self) -> dict:
        return {
            "agent": self.agent_id,
            "nodes": {n: {"di": "/".join(self.uri_for(ChannelKind.DI, n)),
                          "ci": "/".join(self.uri_for(ChannelKind.CI, n))} for n in self.managed},
        }

    # -- data path ------------------------------------------------------------

    def _on_local_tick(self, at: int, out) -> None:
        items = [(vs_id.split("/", 1)[1], rec) for vs_id, rec in out]
        frame = self.dialects[self.host].encode_data(items)
        self.sim.record_local(self.host, ChannelKind.PDI, frame,
                              {"samples": [[r.base_name, t, at] for t, r in items]})
        self.ingest_pdi(self.host, frame)

    def _on_gi_data(self, inbound: Inbound) -> None:
        src = inbound.src
        if src not in self.managed or src == self.host:
            inbound.respond(Code.NOT_FOUND)
            return
        inbound.respond(Code.CHANGED)
        try:
            self.ingest_pdi(src, inbound.msg.payload)
        except (DialectError, UnmanagedNode) as exc:
            log.warning("%s: dropped Gi frame from %s: %s", self.agent_id, src, exc)

    def translate(self, source: str, frame: bytes) -> list[tuple[str, SenMLRecord]]:
        if source not in self.managed:
            raise UnmanagedNode(source)
        items = self.dialects[source].decode_data(frame)
        for _, rec in items:
            if rec.base_name != source:
                raise DialectError(f"frame from {source} carries samples of {rec.base_name}")
        return items

    def ingest_pdi(self, source: str, frame: bytes) -> list[Exchange]:
        """Translate a proprietary frame and push it to the owning applications.

        Samples bound for the same application endpoint travel in one
        SenML batch; batches leave in the order their first sample was
        emitted, which is priority order.
        """
        items = self.translate(source, frame)
        groups: dict[ReportTarget, list[tuple[str, SenMLRecord]]] = {}
        for task_id, rec in items:
            self.reports.setdefault((source, task_id), []).append(int(round(rec.time * 1e6)))
            target = self.routes.get((source, task_id))
            if target is None:
                log.debug("%s: no report target for %s/%s", self.agent_id, source, task_id)
                continue
            groups.setdefault(target, []).append((task_id, rec))
        sent = []
        for target, group in groups.items():
            payload = encode_senml([rec for _, rec in group])
            meta = {"kind": "data", "app": target.app,
                    "samples": [[rec.base_name, task, int(round(rec.time * 1e6))] for task, rec in group]}
            if target.overlay:
                meta["overlay"] = target.overlay
            ex = self.endpoint.request(target.app, Code.POST, target.path, payload, CF_SENML_JSON,
                                       channel=ChannelKind.DI, on_response=self._on_di_response,
                                       meta=meta)
            sent.append(ex)
        return sent

    def _on_di_response(self, ex: Exchange) -> None:
        self.di_exchanges.append(ex)

    def report_counts(self, task_id: str, start: int, end: int) -> dict[str, int]:
        """Samples of ``task_id`` per managed node with time in (start, end]."""
        out = {}
        for node in self.managed:
            if (node, task_id) not in self.routes:
                continue
            times = self.reports.get((node, task_id), [])
            out[node] = sum(1 for t in times if start < t <= end)
        return out

    # -- control path ---------------------------------------------------------

    def _on_ci(self, inbound: Inbound) -> None:
        path = inbound.msg.uri_path
        if len(path) != 5 or path[4] != "ci":
            inbound.respond(Code.NOT_FOUND)
            return
        try:
            cmd = ControlCommand.from_json(inbound.msg.payload)
        except MalformedCommand:
            inbound.respond(Code.BAD_REQUEST, meta={"kind": "control"})
            return
        if cmd.target != path[3]:
            inbound.respond(Code.BAD_REQUEST, meta={"kind": "control"})
            return
        meta = {"kind": "control"}
        if "overlay" in cmd.args:
            meta["overlay"] = cmd.args["overlay"]
        self.handle_ci(cmd, lambda code: inbound.respond(code, meta=meta))

    def handle_ci(self, cmd: ControlCommand, respond: Callable[[Code], None]) -> None:
        """Map a control command onto the target node's PCi.

        ``respond`` is called with the CoAP response code, immediately for
        local targets and after the Gi round trip for Type A targets.
        """
        if cmd.target not in self.managed:
            respond(Code.NOT_FOUND)
            return
        if cmd.verb is Verb.JOIN_OVERLAY:
            respond(self.overlay_hook(cmd) if self.overlay_hook else Code.NOT_FOUND)
            return
        if cmd.verb is Verb.DEPLOY_TASK:
            report_to = cmd.args.get("report_to")
            try:
                task_id = str(cmd.args["task"]["task_id"])
                target = ReportTarget(str(report_to["app"]), tuple(report_to["path"]),
                                      cmd.args.get("overlay")) if report_to else None
            except (KeyError, TypeError):
                respond(Code.BAD_REQUEST)
                return
        dialect = self.dialects[cmd.target]
        frame = dialect.encode_control(cmd)

        def done(code: Code) -> None:
            if cmd.verb is Verb.DEPLOY_TASK and code is Code.CREATED and target is not None:
                self.routes[(cmd.target, task_id)] = target
            if cmd.verb is Verb.REMOVE_TASK and code is Code.CHANGED:
                self.routes.pop((cmd.target, str(cmd.args["task_id"])), None)
            respond(code)

        if cmd.target == self.host:
            self.sim.record_local(self.host, ChannelKind.PCI, frame, {"verb": cmd.verb.value})
            done(apply_command(self.host_runtime, dialect.decode_control(frame)))
            return

        def on_gi(ex: Exchange) -> None:
            done(Code(ex.response.code))

        self.endpoint.request(cmd.target, Code.POST, ("gi", "pci"), frame, CF_OCTET_STREAM,
                              channel=ChannelKind.GI, on_response=on_gi,
                              meta={"kind": "control", "verb": cmd.verb.value})

    def install_task(self, node: str, task: AppTask, target: ReportTarget, sched: ScheduledRuntime) -> str:
        """Pre-provision a task without the control path (baseline deployments)."""
        vs_id = sched.deploy(task)
        self.routes[(node, task.task_id)] = target
        return vs_id


def control_request(endpoint: Endpoint, agent_host: str, agent_id: str, cmd: ControlCommand,
                    on_response=None, meta: dict | None = None) -> Exchange:
    """Send ``cmd`` to an agent's Ci resource for the command's target node."""
    m = {"kind": "control", "verb": cmd.verb.value}
    if meta:
        m.update(meta)
    return endpoint.request(agent_host, Code.POST, uri_for(agent_id, ChannelKind.CI, cmd.target),
                            cmd.to_json(), CF_JSON, channel=ChannelKind.CI,
                            on_response=on_response, meta=m)
