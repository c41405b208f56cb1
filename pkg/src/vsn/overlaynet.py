"""Application overlays.

An application node acts as rendezvous for its overlay. Creation runs in
three steps: resolve candidates through the registry and pre-configure;
advertise to each candidate over Ci, then collect join requests and deliver
tasks; execute. Group traffic is carried by rendezvous-relayed unicast
fan-out.

Overlay frames sit inside CoAP payloads: a one-byte kind tag followed by a
JSON object ``{"overlay", "sender", "body"}``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable

from .channels import ChannelKind
from .registry import Registry
from .sensoragent import ControlCommand, Verb, control_request
from .simkernel import Simulator
from .transport import Endpoint, Exchange, Inbound
from .vruntime import AppTask
from .wirecodec import CF_OCTET_STREAM, CF_SENML_JSON, Code, SenMLError, decode_senml

log = logging.getLogger(__name__)


class OverlayError(Exception):
    pass


class NoCandidates(OverlayError):
    pass


class AllDeclined(OverlayError):
    pass


class UnknownOverlay(OverlayError):
    pass


class AlreadyMember(OverlayError):
    pass


class NotMember(OverlayError):
    pass


class OverlayNotReady(OverlayError):
    pass


class FrameKind(IntEnum):
    ADVERTISE = 1
    JOIN_REQUEST = 2
    JOIN_ACK = 3
    GROUP_MULTICAST = 4
    DIRECT_REPLY = 5


@dataclass(frozen=True)
class OverlayMessage:
    kind: FrameKind
    overlay_id: str
    sender: str
    payload: dict = field(default_factory=dict)

    def encode(self) -> bytes:
        body = {"overlay": self.overlay_id, "sender": self.sender, "body": self.payload}
        return bytes([int(self.kind)]) + json.dumps(body, separators=(",", ":"), sort_keys=True).encode()

    @classmethod
    def decode(cls, data: bytes) -> "OverlayMessage":
        data = bytes(data)
        if not data:
            raise OverlayError("empty overlay frame")
        try:
            kind = FrameKind(data[0])
            doc = json.loads(data[1:].decode("utf-8"))
            return cls(kind, doc["overlay"], doc["sender"], doc.get("body", {}))
        except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
            raise OverlayError(f"bad overlay frame: {exc}") from None


@dataclass(frozen=True)
class OverlayAdvertisement:
    overlay_id: str
    service_name: str
    rendezvous: str
    created_at: int

    def __post_init__(self):
        if not self.service_name:
            raise OverlayError("service_name must be nonempty")

    def to_json(self) -> dict:
        return {"overlay_id": self.overlay_id, "service_name": self.service_name,
                "rendezvous": self.rendezvous, "created_at": self.created_at}


class GroupState(IntEnum):
    FORMING = 0
    READY = 1
    ACTIVE = 2


@dataclass
class OverlayGroup:
    overlay_id: str
    rendezvous: str
    service_name: str
    started_at: int
    candidates: list[str] = field(default_factory=list)
    members: list[str] = field(default_factory=list)
    state: GroupState = GroupState.FORMING
    ready_at: int | None = None
    declined: list[str] = field(default_factory=list)
    delivered: set = field(default_factory=set)
    failed: str | None = None

    def advance(self, state: GroupState) -> None:
        if state != self.state + 1:
            raise OverlayError(f"{self.overlay_id}: illegal transition {self.state.name} -> {state.name}")
        self.state = state

    @property
    def audience(self) -> set[str]:
        return {self.rendezvous, *self.candidates}


def _path(overlay_id: str) -> tuple[str, str]:
    return ("overlays", overlay_id)


def _meta(kind: FrameKind | str, overlay_id: str) -> dict:
    label = kind.name if isinstance(kind, FrameKind) else kind
    return {"kind": "overlay", "frame": label, "overlay": overlay_id}


class Rendezvous:
    """Per-overlay state machine owned by an application node."""

    def __init__(self, sim: Simulator, endpoint: Endpoint, registry: Registry,
                 preconfig_cost: int = 0):
        self.sim = sim
        self.endpoint = endpoint
        self.node_id = endpoint.node_id
        self.registry = registry
        self.preconfig_cost = preconfig_cost
        self.groups: dict[str, OverlayGroup] = {}
        self.on_member: Callable[[OverlayGroup, str, dict], None] | None = None
        self.on_ready: Callable[[OverlayGroup], None] | None = None
        self.on_direct: Callable[[OverlayMessage], None] | None = None
        self._join_info: dict[tuple[str, str], dict] = {}
        endpoint.route(("overlays",), self._on_frame)

    def group(self, overlay_id: str) -> OverlayGroup:
        try:
            return self.groups[overlay_id]
        except KeyError:
            raise UnknownOverlay(overlay_id) from None

    def resolve(self, candidates) -> list[str]:
        """Map candidate ids to overlay peers (Type A ids resolve to their agent host)."""
        peers: list[str] = []
        for cid in candidates:
            d = self.registry.get(cid)
            if d is None:
                log.warning("%s: candidate %s is not registered", self.node_id, cid)
                continue
            host = self.registry.agent_host(d.agent)
            if host is None:
                continue
            if host not in peers:
                peers.append(host)
        return peers

    def create_overlay(self, service_name: str, candidates, overlay_id: str | None = None) -> OverlayGroup:
        candidates = list(candidates)
        if not candidates:
            raise NoCandidates(service_name)
        overlay_id = overlay_id or f"{self.node_id}:{service_name}"
        if overlay_id in self.groups:
            raise OverlayError(f"overlay {overlay_id} exists")
        group = OverlayGroup(overlay_id, self.node_id, service_name, self.sim.now)
        self.groups[overlay_id] = group
        self.sim.note("overlay_start", overlay=overlay_id, service=service_name)
        ad = OverlayAdvertisement(overlay_id, service_name, self.node_id, self.sim.now)

        def advertise():
            group.candidates = self.resolve(candidates)
            if not group.candidates:
                group.failed = "NoCandidates"
                self.sim.note("overlay_failed", overlay=overlay_id, reason="NoCandidates")
                return
            for peer in group.candidates:
                self.sim.note("discovery", overlay=overlay_id, peer=peer)
            for peer in group.candidates:
                frame = OverlayMessage(FrameKind.ADVERTISE, overlay_id, self.node_id, ad.to_json())
                self.endpoint.request(peer, Code.POST, _path(overlay_id), frame.encode(),
                                      CF_OCTET_STREAM, channel=ChannelKind.CI,
                                      on_response=lambda ex, p=peer: self._on_advertise_reply(group, p, ex),
                                      meta=_meta(FrameKind.ADVERTISE, overlay_id))

        if self.preconfig_cost:
            self.sim.call_later(self.preconfig_cost, self.node_id, advertise, "preconfig")
        else:
            advertise()
        return group

    def _on_advertise_reply(self, group: OverlayGroup, peer: str, ex: Exchange) -> None:
        resp = ex.response
        if resp.code == Code.CREATED and resp.payload:
            msg = OverlayMessage.decode(resp.payload)
            if msg.kind is FrameKind.JOIN_REQUEST:
                self._join_info[(group.overlay_id, peer)] = msg.payload
                self.join(group.overlay_id, peer)
                return
        group.declined.append(peer)
        self.sim.note("declined", overlay=group.overlay_id, peer=peer)
        self._check_ready(group)

    def join(self, overlay_id: str, peer: str) -> OverlayMessage:
        """Admit an advertised peer and send it a JoinAck."""
        group = self.group(overlay_id)
        if peer not in group.candidates:
            raise UnknownOverlay(f"{peer} was never advertised {overlay_id}")
        if peer in group.members:
            raise AlreadyMember(f"{peer} in {overlay_id}")
        if peer in group.declined:  # changed its mind via a JoinOverlay command
            group.declined.remove(peer)
        group.members.append(peer)
        self.sim.note("join", overlay=overlay_id, peer=peer)
        ack = OverlayMessage(FrameKind.JOIN_ACK, overlay_id, self.node_id, {"members": len(group.members)})
        self.endpoint.request(peer, Code.POST, _path(overlay_id), ack.encode(), CF_OCTET_STREAM,
                              channel=ChannelKind.CI, meta=_meta(FrameKind.JOIN_ACK, overlay_id))
        info = self._join_info.pop((overlay_id, peer), {})
        if self.on_member is not None:
            self.on_member(group, peer, info)
        else:
            self.task_delivered(overlay_id, peer)
        return ack

    def task_delivered(self, overlay_id: str, peer: str) -> None:
        group = self.group(overlay_id)
        if peer in group.delivered:
            return
        group.delivered.add(peer)
        self.sim.note("task_delivery", overlay=overlay_id, peer=peer)
        self._check_ready(group)

    def _check_ready(self, group: OverlayGroup) -> None:
        if group.state is not GroupState.FORMING:
            return
        answered = len(group.members) + len(group.declined)
        if answered < len(group.candidates):
            return
        if not group.members:
            group.failed = "AllDeclined"
            self.sim.note("overlay_failed", overlay=group.overlay_id, reason="AllDeclined")
            return
        if len(group.delivered) < len(group.members):
            return
        group.advance(GroupState.READY)
        group.ready_at = self.sim.now
        self.sim.note("ready", overlay=group.overlay_id, members=list(group.members))
        if self.on_ready is not None:
            self.on_ready(group)

    def mark_active(self, overlay_id: str) -> None:
        group = self.group(overlay_id)
        if group.state is GroupState.READY:
            group.advance(GroupState.ACTIVE)
            self.sim.note("active", overlay=overlay_id)

    def multicast(self, overlay_id: str, sender: str, payload: dict,
                  on_reply: Callable[[str, OverlayMessage | None, Exchange], None] | None = None) -> int:
        """Fan ``payload`` out to every member except ``sender``."""
        group = self.group(overlay_id)
        if sender != group.rendezvous and sender not in group.members:
            raise NotMember(f"{sender} not in {overlay_id}")
        if group.state < GroupState.READY:
            raise OverlayNotReady(overlay_id)
        targets = [m for m in group.members if m != sender]
        frame = OverlayMessage(FrameKind.GROUP_MULTICAST, overlay_id, sender, payload).encode()

        def reply(ex: Exchange, peer: str) -> None:
            resp = ex.response
            msg = OverlayMessage.decode(resp.payload) if resp.payload else None
            if on_reply is not None:
                on_reply(peer, msg, ex)

        for peer in targets:
            self.endpoint.request(peer, Code.POST, _path(overlay_id), frame, CF_OCTET_STREAM,
                                  channel=ChannelKind.CI,
                                  on_response=lambda ex, p=peer: reply(ex, p),
                                  meta=_meta(FrameKind.GROUP_MULTICAST, overlay_id))
        return len(targets)

    def _on_frame(self, inbound: Inbound) -> None:
        try:
            msg = OverlayMessage.decode(inbound.msg.payload)
        except OverlayError:
            inbound.respond(Code.BAD_REQUEST)
            return
        group = self.groups.get(msg.overlay_id)
        meta = _meta("response", msg.overlay_id)
        if group is None or inbound.msg.uri_path[1:] != (msg.overlay_id,):
            inbound.respond(Code.NOT_FOUND, meta=meta)
            return
        if msg.kind is FrameKind.GROUP_MULTICAST:
            try:
                self.multicast(msg.overlay_id, msg.sender, msg.payload)
            except OverlayError:
                inbound.respond(Code.BAD_REQUEST, meta=meta)
                return
            inbound.respond(Code.CHANGED, meta=meta)
        elif msg.kind is FrameKind.DIRECT_REPLY:
            if msg.sender not in group.members:
                inbound.respond(Code.BAD_REQUEST, meta=meta)
                return
            inbound.respond(Code.CHANGED, meta=meta)
            if self.on_direct is not None:
                self.on_direct(msg)
        elif msg.kind is FrameKind.JOIN_REQUEST:
            self._join_info[(msg.overlay_id, msg.sender)] = msg.payload
            try:
                self.join(msg.overlay_id, msg.sender)
            except OverlayError:
                inbound.respond(Code.BAD_REQUEST, meta=meta)
                return
            inbound.respond(Code.CHANGED, meta=meta)
        else:
            inbound.respond(Code.BAD_REQUEST, meta=meta)


MulticastHandler = Callable[[OverlayMessage], "tuple[dict, int] | None"]


class EdgePeer:
    """Overlay side of an agent host."""

    def __init__(self, sim: Simulator, endpoint: Endpoint, frame_cost: int = 0,
                 describe: Callable[[], dict] | None = None):
        self.sim = sim
        self.endpoint = endpoint
        self.peer_id = endpoint.node_id
        self.frame_cost = frame_cost
        self.describe = describe or (lambda: {})
        self.accept: Callable[[OverlayAdvertisement], bool] = lambda ad: True
        self.advertisements: dict[str, OverlayAdvertisement] = {}
        self.memberships: dict[str, str] = {}
        self.on_multicast: MulticastHandler | None = None
        self.inbox: list[OverlayMessage] = []
        endpoint.route(("overlays",), self._on_frame)

    def _join_request(self, overlay_id: str) -> OverlayMessage:
        return OverlayMessage(FrameKind.JOIN_REQUEST, overlay_id, self.peer_id, self.describe())

    def receive_advertisement(self, ad: OverlayAdvertisement) -> bool:
        self.advertisements[ad.overlay_id] = ad
        return bool(self.accept(ad))

    def request_join(self, overlay_id: str) -> None:
        """Ask to join an overlay advertised out of band (e.g. a JoinOverlay command)."""
        ad = self.advertisements.get(overlay_id)
        if ad is None:
            raise UnknownOverlay(overlay_id)
        self.endpoint.request(ad.rendezvous, Code.POST, _path(overlay_id),
                              self._join_request(overlay_id).encode(), CF_OCTET_STREAM,
                              channel=ChannelKind.CI, meta=_meta(FrameKind.JOIN_REQUEST, overlay_id))

    def handle_join_command(self, cmd: ControlCommand) -> Code:
        if cmd.verb is not Verb.JOIN_OVERLAY:
            return Code.BAD_REQUEST
        a = cmd.args
        try:
            ad = OverlayAdvertisement(a["overlay_id"], a["service_name"], a["rendezvous"],
                                      int(a.get("created_at", self.sim.now)))
        except (OverlayError, KeyError, ValueError):
            return Code.BAD_REQUEST
        if not self.receive_advertisement(ad):
            return Code.BAD_REQUEST
        self.request_join(ad.overlay_id)
        return Code.CHANGED

    def _on_frame(self, inbound: Inbound) -> None:
        try:
            msg = OverlayMessage.decode(inbound.msg.payload)
        except OverlayError:
            inbound.respond(Code.BAD_REQUEST)
            return
        oid = msg.overlay_id
        meta = _meta("response", oid)
        if msg.kind is FrameKind.ADVERTISE:
            try:
                ad = OverlayAdvertisement(**msg.payload)
            except (TypeError, OverlayError):
                inbound.respond(Code.BAD_REQUEST, meta=meta)
                return
            if self.receive_advertisement(ad):
                reply = self._join_request(oid)
                inbound.respond(Code.CREATED, reply.encode(), CF_OCTET_STREAM,
                                meta=_meta(FrameKind.JOIN_REQUEST, oid), delay=self.frame_cost)
            else:
                inbound.respond(Code.BAD_REQUEST, meta=meta)
        elif msg.kind is FrameKind.JOIN_ACK:
            if oid not in self.advertisements:
                inbound.respond(Code.NOT_FOUND, meta=meta)
                return
            self.memberships[oid] = msg.sender
            inbound.respond(Code.CHANGED, meta=meta)
        elif msg.kind is FrameKind.GROUP_MULTICAST:
            if oid not in self.memberships:
                inbound.respond(Code.NOT_FOUND, meta=meta)
                return
            self.inbox.append(msg)
            result = self.on_multicast(msg) if self.on_multicast else None
            if result is None:
                inbound.respond(Code.CHANGED, meta=meta, delay=self.frame_cost)
                return
            body, compute = result
            reply = OverlayMessage(FrameKind.DIRECT_REPLY, oid, self.peer_id, body)
            inbound.respond(Code.CHANGED, reply.encode(), CF_OCTET_STREAM,
                            meta=_meta(FrameKind.DIRECT_REPLY, oid), delay=self.frame_cost + compute)
        elif msg.kind is FrameKind.DIRECT_REPLY:
            if oid not in self.memberships:
                inbound.respond(Code.NOT_FOUND, meta=meta)
                return
            self.inbox.append(msg)
            inbound.respond(Code.CHANGED, meta=meta)
        else:
            inbound.respond(Code.BAD_REQUEST, meta=meta)

    def multicast(self, overlay_id: str, payload: dict) -> None:
        """Member-originated group message, relayed by the rendezvous."""
        rendezvous = self.memberships.get(overlay_id)
        if rendezvous is None:
            raise NotMember(f"{self.peer_id} not in {overlay_id}")
        frame = OverlayMessage(FrameKind.GROUP_MULTICAST, overlay_id, self.peer_id, payload)
        self.endpoint.request(rendezvous, Code.POST, _path(overlay_id), frame.encode(),
                              CF_OCTET_STREAM, channel=ChannelKind.CI,
                              meta=_meta(FrameKind.GROUP_MULTICAST, overlay_id))

    def direct_reply(self, overlay_id: str, to: str, payload: dict) -> int:
        """Unicast a reply to the rendezvous (or one member); returns delivery time."""
        if overlay_id not in self.memberships:
            raise NotMember(f"{self.peer_id} not in {overlay_id}")
        frame = OverlayMessage(FrameKind.DIRECT_REPLY, overlay_id, self.peer_id, payload)
        ex = self.endpoint.request(to, Code.POST, _path(overlay_id), frame.encode(),
                                   CF_OCTET_STREAM, channel=ChannelKind.CI,
                                   meta=_meta(FrameKind.DIRECT_REPLY, overlay_id))
        return self.sim.log[ex.send_index]["deliver_at"]


@dataclass(frozen=True)
class TaskPlacement:
    node: str
    task: AppTask
    path: tuple[str, ...]


class OverlayApplication:
    """End-user application: rendezvous of its overlay and sink of its Di data."""

    def __init__(self, sim: Simulator, app_id: str, registry: Registry,
                 placements: list[TaskPlacement], service_name: str,
                 preconfig_cost: int = 0):
        self.sim = sim
        self.app_id = app_id
        self.registry = registry
        self.placements = list(placements)
        self.service_name = service_name
        self.endpoint = Endpoint(sim, app_id)
        self.rendezvous = Rendezvous(sim, self.endpoint, registry, preconfig_cost)
        self.rendezvous.on_member = self._deliver_tasks
        self.overlay_id: str | None = None
        self.batches: list[tuple[int, str, list]] = []  # (received_at, src, records)
        self.rejected = 0
        self._first_data: set[str] = set()
        for path in sorted({p.path for p in self.placements}):
            self.endpoint.route(path, self._on_data)

    @property
    def group(self) -> OverlayGroup | None:
        return self.rendezvous.groups.get(self.overlay_id) if self.overlay_id else None

    def candidates(self) -> list[str]:
        return sorted({p.node for p in self.placements})

    def start(self) -> OverlayGroup:
        group = self.rendezvous.create_overlay(self.service_name, self.candidates(),
                                               overlay_id=f"{self.app_id}:{self.service_name}")
        self.overlay_id = group.overlay_id
        return group

    def _deliver_tasks(self, group: OverlayGroup, peer: str, info: dict) -> None:
        nodes = info.get("nodes", {})
        agent = info.get("agent", peer)
        mine = [p for p in self.placements if p.node in nodes]
        if not mine:
            self.rendezvous.task_delivered(group.overlay_id, peer)
            return
        outstanding = {"n": len(mine)}

        def acked(ex: Exchange) -> None:
            if not Code(ex.response.code).is_success:
                log.warning("%s: task delivery to %s failed with %s", self.app_id, ex.dst,
                            Code(ex.response.code).dotted)
            outstanding["n"] -= 1
            if outstanding["n"] == 0:
                self.rendezvous.task_delivered(group.overlay_id, peer)

        for p in mine:
            cmd = ControlCommand(Verb.DEPLOY_TASK, p.node, {
                "task": p.task.to_json(),
                "report_to": {"app": self.app_id, "path": list(p.path)},
                "overlay": group.overlay_id,
            })
            control_request(self.endpoint, peer, agent, cmd, acked, meta={"overlay": group.overlay_id})

    def _on_data(self, inbound: Inbound) -> None:
        msg = inbound.msg
        meta = {"kind": "data", "app": self.app_id}
        if self.overlay_id:
            meta["overlay"] = self.overlay_id
        if msg.code != Code.POST or not msg.payload or msg.content_format != CF_SENML_JSON:
            self.rejected += 1
            inbound.respond(Code.BAD_REQUEST, meta=meta)
            return
        try:
            batch = decode_senml(msg.payload)
        except SenMLError:
            self.rejected += 1
            inbound.respond(Code.BAD_REQUEST, meta=meta)
            return
        inbound.respond(Code.CREATED, meta=meta)
        records = list(batch)
        self.batches.append((self.sim.now, inbound.src, records))
        if inbound.src not in self._first_data and self.overlay_id:
            self._first_data.add(inbound.src)
            self.sim.note("first_data", overlay=self.overlay_id, peer=inbound.src)
            group = self.group
            if group is not None:
                self.rendezvous.mark_active(group.overlay_id)
        self.on_records(inbound, records)

    def on_records(self, inbound: Inbound, records) -> None:
        pass
