"""City fire-monitoring application and the fire contour algorithm.

Sensors closer to a fire report more often. With a linear rate model

    rate(d) = lambda_max * max(0, 1 - d / R)

an observed notification rate inverts exactly to a distance estimate, and
the per-sensor estimates around the rate-weighted centroid give a contour.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field

from .channels import ChannelKind
from .harness.metrics import MetricSample, NotificationRound, measure_fnd
from .overlaynet import (GroupState, OverlayApplication, OverlayMessage, OverlayNotReady,
                         TaskPlacement)
from .registry import Registry
from .sensoragent import SensorAgent
from .simkernel import Simulator
from .transport import Exchange, Inbound
from .wirecodec import CF_JSON, Code, SenMLRecord

log = logging.getLogger(__name__)


class FcaError(Exception):
    pass


class BadParams(FcaError):
    pass


class RateAboveMax(FcaError):
    pass


class TooFewReports(FcaError):
    pass


@dataclass(frozen=True)
class FcaParams:
    lambda_max: float = 1.0  # notifications per second at the fire origin
    radius: float = 500.0  # metres; no notifications beyond

    def __post_init__(self):
        if not (self.lambda_max > 0 and self.radius > 0):
            raise BadParams(f"lambda_max={self.lambda_max} radius={self.radius}")


@dataclass(frozen=True)
class FireEvent:
    reporter: str
    reading: SenMLRecord
    received_at: int


@dataclass(frozen=True)
class RateObservation:
    node: str
    window: float  # seconds
    notification_count: int

    def __post_init__(self):
        if self.window <= 0 or self.notification_count < 0:
            raise FcaError("window must be > 0 and count >= 0")

    @property
    def rate(self) -> float:
        return self.notification_count / self.window

    def to_json(self) -> dict:
        return {"node": self.node, "window": self.window, "count": self.notification_count}

    @classmethod
    def from_json(cls, obj) -> "RateObservation":
        return cls(obj["node"], float(obj["window"]), int(obj["count"]))


@dataclass
class ContourEstimate:
    origin: tuple[float, float]
    distances: dict[str, float]
    contour: list[tuple[float, float]]  # (angle in radians, radius in metres)
    confidence: float
    rates: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "origin": list(self.origin),
            "sectors": [{"angle_deg": math.degrees(a), "radius_m": r} for a, r in self.contour],
            "confidence": self.confidence,
            "distances": dict(sorted(self.distances.items())),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["node", "rate", "estimated_distance_m"])
        for node in sorted(self.distances):
            w.writerow([node, repr(self.rates.get(node, 0.0)), repr(self.distances[node])])
        return buf.getvalue()


def rate_model(distance: float, params: FcaParams) -> float:
    if distance < 0:
        raise BadParams(f"distance {distance}")
    return params.lambda_max * max(0.0, 1.0 - distance / params.radius)


def estimate_distance(obs: RateObservation | float, params: FcaParams) -> float:
    """Invert :func:`rate_model`; a zero rate means "at or beyond R"."""
    rate = obs.rate if isinstance(obs, RateObservation) else float(obs)
    if rate > params.lambda_max:
        raise RateAboveMax(f"{rate} > {params.lambda_max}")
    if rate < 0:
        raise FcaError(f"negative rate {rate}")
    return params.radius * (1.0 - rate / params.lambda_max)


def compute_contour(observations, positions, params: FcaParams, sectors: int = 8) -> ContourEstimate:
    """Estimate the fire origin and a sector contour from per-sensor rates.

    Rates above ``lambda_max`` (possible under counting noise) are clamped.
    Empty sectors take the circular linear interpolation of their nearest
    populated neighbours.
    """
    observations = list(observations)
    positive = [o for o in observations if o.rate > 0]
    if len(positive) < 3:
        raise TooFewReports(f"{len(positive)} positive observations, need 3")

    def clamp(rate):
        return min(rate, params.lambda_max)

    total = math.fsum(clamp(o.rate) for o in positive)
    ox = math.fsum(clamp(o.rate) * positions[o.node][0] for o in positive) / total
    oy = math.fsum(clamp(o.rate) * positions[o.node][1] for o in positive) / total

    distances = {o.node: estimate_distance(clamp(o.rate), params) for o in observations}
    width = 2 * math.pi / sectors
    buckets: list[list[float]] = [[] for _ in range(sectors)]
    for o in positive:
        x, y = positions[o.node]
        theta = math.atan2(y - oy, x - ox)
        k = int(math.floor(((theta + width / 2) % (2 * math.pi)) / width)) % sectors
        buckets[k].append(distances[o.node])

    filled = {k: math.fsum(b) / len(b) for k, b in enumerate(buckets) if b}
    radii = []
    for k in range(sectors):
        if k in filled:
            radii.append(filled[k])
            continue
        back = next(s for s in range(1, sectors + 1) if (k - s) % sectors in filled)
        fwd = next(s for s in range(1, sectors + 1) if (k + s) % sectors in filled)
        lo, hi = filled[(k - back) % sectors], filled[(k + fwd) % sectors]
        radii.append(lo + (hi - lo) * back / (back + fwd))
    contour = [(k * width, radii[k]) for k in range(sectors)]
    return ContourEstimate((ox, oy), distances, contour, len(positive) / len(observations),
                           {o.node: o.rate for o in observations})


def observations_for(agent: SensorAgent, task_id: str, window_us: int, now: int) -> list[dict]:
    counts = agent.report_counts(task_id, now - window_us, now)
    window = window_us / 1e6
    return [RateObservation(node, window, n).to_json() for node, n in sorted(counts.items())]


def install_peer_fca(agent: SensorAgent, peer, compute_cost: int) -> None:
    """Answer fire notifications with this host's rate observations."""

    def on_multicast(msg: OverlayMessage):
        body = msg.payload
        if body.get("type") != "fire-notification":
            return None
        obs = observations_for(agent, body["task_id"], int(body["window_us"]), agent.sim.now)
        return {"observations": obs}, compute_cost

    peer.on_multicast = on_multicast


def install_baseline_fca(agent: SensorAgent, compute_cost: int) -> None:
    """Direct (non-overlay) contour request served by the GTO/agent host."""

    def handle(inbound: Inbound) -> None:
        try:
            req = json.loads(inbound.msg.payload)
            obs = observations_for(agent, req["task_id"], int(req["window_us"]), agent.sim.now)
        except (ValueError, KeyError, TypeError):
            inbound.respond(Code.BAD_REQUEST)
            return
        payload = json.dumps({"observations": obs}, separators=(",", ":")).encode()
        inbound.respond(Code.CONTENT, payload, CF_JSON, meta={"kind": "control"}, delay=compute_cost)

    agent.endpoint.route(("agents", agent.agent_id, "fca"), handle)


class FireContourApp(OverlayApplication):
    """City administration: rendezvous of the fire contour service."""

    def __init__(self, sim: Simulator, app_id: str, registry: Registry,
                 placements: list[TaskPlacement], service_name: str = "fire contour service",
                 *, fire_task: str, fire_path, params: FcaParams = FcaParams(),
                 window_us: int = 100_000_000, debounce_us: int = 1_000_000,
                 preconfig_cost: int = 0, baseline: bool = False, iteration: int = 0):
        super().__init__(sim, app_id, registry, placements, service_name, preconfig_cost)
        self.fire_task = fire_task
        self.fire_path = tuple(fire_path)
        self.params = params
        self.window_us = window_us
        self.debounce_us = debounce_us
        self.baseline = baseline
        self.iteration = iteration
        self.events: list[FireEvent] = []
        self._last_event: dict[str, int] = {}
        self.rounds: list[NotificationRound] = []
        self.fnd: list[MetricSample] = []
        self.contours: list[tuple[int, ContourEstimate]] = []
        self.skipped = {"debounced": 0, "busy": 0, "not_ready": 0}

    @property
    def in_flight(self) -> NotificationRound | None:
        if self.rounds and not self.rounds[-1].complete:
            return self.rounds[-1]
        return None

    def positions(self) -> dict[str, tuple[float, float]]:
        return {d.node_id: d.position for d in self.registry.query()}

    def on_records(self, inbound: Inbound, records) -> None:
        if inbound.msg.uri_path != self.fire_path:
            return
        for rec in records:
            ev = FireEvent(rec.base_name, rec, self.sim.now)
            try:
                self.on_fire_event(ev)
            except OverlayNotReady:
                self.skipped["not_ready"] += 1
                self.sim.note("fire_event_before_ready", reporter=ev.reporter)

    def on_fire_event(self, ev: FireEvent) -> list[str]:
        """React to one fire report; returns the actions taken."""
        group = self.group
        if not self.baseline and (group is None or group.state < GroupState.READY):
            raise OverlayNotReady(self.overlay_id or self.app_id)
        self.events.append(ev)
        last = self._last_event.get(ev.reporter)
        if last is not None and ev.received_at - last < self.debounce_us:
            self.skipped["debounced"] += 1
            return ["debounced"]
        if self.in_flight is not None:
            self.skipped["busy"] += 1
            return ["busy"]
        self._last_event[ev.reporter] = ev.received_at
        if self.baseline:
            n = self._direct_round(ev)
            return [f"direct:{n}"]
        n = self._multicast_round(ev)
        return [f"multicast:{n}"]

    def _new_round(self, ev: FireEvent, expected: list[str]) -> NotificationRound:
        rnd = NotificationRound(ev.reporter, self.sim.now, expected, send_index=len(self.sim.log))
        self.rounds.append(rnd)
        return rnd

    def _multicast_round(self, ev: FireEvent) -> int:
        group = self.group
        rnd = self._new_round(ev, [m for m in group.members if m != self.app_id])
        payload = {"type": "fire-notification", "reporter": ev.reporter,
                   "task_id": self.fire_task, "window_us": self.window_us}

        def on_reply(peer: str, msg: OverlayMessage | None, ex: Exchange) -> None:
            obs = msg.payload.get("observations", []) if msg is not None else []
            self._reply(rnd, peer, obs, ex)

        return self.rendezvous.multicast(group.overlay_id, self.app_id, payload, on_reply)

    def _direct_round(self, ev: FireEvent) -> int:
        hosts = self.rendezvous.resolve(self.candidates())
        rnd = self._new_round(ev, hosts)
        body = json.dumps({"task_id": self.fire_task, "window_us": self.window_us},
                          separators=(",", ":")).encode()
        for host in hosts:
            agent_id = self.registry.get(host).agent

            def on_resp(ex: Exchange, peer=host) -> None:
                try:
                    obs = json.loads(ex.response.payload)["observations"]
                except (ValueError, KeyError):
                    obs = []
                self._reply(rnd, peer, obs, ex)

            self.endpoint.request(host, Code.POST, ("agents", agent_id, "fca"), body, CF_JSON,
                                  channel=ChannelKind.CI, on_response=on_resp,
                                  meta={"kind": "control", "verb": "ContourRequest"})
        return len(hosts)

    def _reply(self, rnd: NotificationRound, peer: str, obs: list, ex: Exchange) -> None:
        rnd.replies[peer] = ex.received_at
        rnd.reply_index[peer] = ex.receive_index
        rnd.observations.extend(RateObservation.from_json(o) for o in obs)
        if not rnd.complete:
            return
        sample = measure_fnd(rnd, self.iteration)
        self.fnd.append(sample)
        self.sim.note("fnd", reporter=rnd.context, value_ms=sample.value, refs=list(sample.refs),
                      observations=[o.to_json() for o in rnd.observations])
        try:
            est = compute_contour(rnd.observations, self.positions(), self.params)
        except (FcaError, KeyError) as exc:  # too few reports early in a fire is normal
            log.debug("%s: no contour yet: %s", self.app_id, exc)
            return
        self.contours.append((self.sim.now, est))
