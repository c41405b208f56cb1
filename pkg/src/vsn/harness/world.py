"""Build one simulated deployment from a scenario config and run it."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

from ..firecontour import (ContourEstimate, FcaParams, FireContourApp, install_baseline_fca,
                           install_peer_fca)
from ..overlaynet import EdgePeer, OverlayApplication, TaskPlacement
from ..physnode import NodeKind, PhysicalLayer
from ..registry import Registry, SensorDescriptor
from ..sensoragent import ControlCommand, DelegatedNode, ReportTarget, SensorAgent, control_request
from ..simkernel import Simulator
from ..transport import Endpoint, Exchange
from ..vruntime import VirtualSensorLayer
from ..wirecodec import Code
from .config import ScenarioConfig
from .metrics import (MetricSample, NeverReady, OverlayTrace, PostExchange, measure_hpd,
                      measure_ocd)

log = logging.getLogger(__name__)


class FreshStateViolation(Exception):
    pass


def derived_seed(seed: int, iteration: int) -> int:
    return seed * 100_003 + iteration


@dataclass
class World:
    cfg: ScenarioConfig
    iteration: int
    baseline: bool
    sim: Simulator
    physical: PhysicalLayer
    vlayer: VirtualSensorLayer
    registry: Registry
    agents: dict[str, SensorAgent] = field(default_factory=dict)
    peers: dict[str, EdgePeer] = field(default_factory=dict)
    delegated: dict[str, DelegatedNode] = field(default_factory=dict)
    apps: dict[str, OverlayApplication] = field(default_factory=dict)
    control_results: list[tuple[int, str, str, str]] = field(default_factory=list)
    ran: bool = False

    def agent_for(self, node: str) -> SensorAgent:
        return self.agents[self.registry.agent_host(self.registry.get(node).agent)]

    def sched_for(self, node: str):
        if node in self.delegated:
            return self.delegated[node].sched
        return self.agents[node].host_runtime

    def check_fresh(self) -> None:
        if self.sim.sessions or self.sim.log or self.sim.now:
            raise FreshStateViolation("simulator carries state into the iteration")
        for app in self.apps.values():
            if app.rendezvous.groups:
                raise FreshStateViolation(f"{app.app_id} already has overlay groups")
        for peer in self.peers.values():
            if peer.memberships or peer.advertisements:
                raise FreshStateViolation(f"{peer.peer_id} already holds memberships")

    def run(self) -> "World":
        if self.ran:
            raise RuntimeError("world already ran")
        self.check_fresh()
        self._schedule()
        self.sim.run_until(self.cfg.duration)
        self.ran = True
        return self

    # -- scheduling -------------------------------------------------------------

    def _schedule(self) -> None:
        cfg = self.cfg
        self.sim.note("roster", iteration=self.iteration, baseline=self.baseline,
                      nodes={n.node.id: {"kind": n.node.kind.value, "position": list(n.node.position),
                                         "gto": n.node.gto_ref} for n in cfg.nodes},
                      fca={"lambda_max": cfg.lambda_max, "radius_m": cfg.radius,
                           "window_us": cfg.window})
        for app_cfg in cfg.apps:
            app = self.apps.get(app_cfg.id)
            if app is None:
                continue
            if self.baseline:
                self.sim.call_at(app_cfg.start, app_cfg.id, lambda a=app: self._install_direct(a), "install")
            else:
                self.sim.call_at(app_cfg.start, app_cfg.id, app.start, "overlay")
        if not self.baseline:
            for c in cfg.control:
                self.sim.call_at(c.at, c.app, lambda c=c: self._send_control(c), "control")

    def _install_direct(self, app: OverlayApplication) -> None:
        for p in app.placements:
            agent = self.agent_for(p.node)
            agent.install_task(p.node, p.task, ReportTarget(app.app_id, p.path), self.sched_for(p.node))

    def _send_control(self, c) -> None:
        app = self.apps[c.app]
        desc = self.registry.get(c.target)
        host = self.registry.agent_host(desc.agent)
        cmd = ControlCommand(c.verb, c.target, dict(c.args))

        def done(ex: Exchange) -> None:
            code = Code(ex.response.code)
            self.control_results.append((self.sim.now, c.verb, c.target, code.dotted))
            self.sim.note("control_result", app=c.app, verb=c.verb, target=c.target, code=code.dotted)

        meta = {"overlay": app.overlay_id} if app.overlay_id else None
        control_request(app.endpoint, host, desc.agent, cmd, done, meta=meta)

    # -- results ----------------------------------------------------------------

    def hpd_samples(self) -> list[MetricSample]:
        exchanges = sorted((ex for a in self.agents.values() for ex in a.di_exchanges),
                           key=lambda ex: ex.send_index)
        return [measure_hpd(PostExchange(f"{ex.src}->{ex.dst}", ex.sent_at, ex.received_at,
                                         ex.send_index, ex.receive_index), self.iteration)
                for ex in exchanges]

    def hpd_series(self) -> dict[str, list[MetricSample]]:
        out: dict[str, list[MetricSample]] = {}
        for s in self.hpd_samples():
            out.setdefault(s.context, []).append(s)
        return out

    def ocd_samples(self) -> list[MetricSample]:
        starts, readies = {}, {}
        for e in self.sim.log:
            if e["type"] != "note":
                continue
            if e["kind"] == "overlay_start":
                starts[e["overlay"]] = e
            elif e["kind"] == "ready":
                readies[e["overlay"]] = e
        out = []
        for oid in sorted(starts):
            s, r = starts[oid], readies.get(oid)
            trace = OverlayTrace(oid, s["at"], r["at"] if r else None, s["i"], r["i"] if r else None)
            try:
                out.append(measure_ocd(trace, self.iteration))
            except NeverReady:
                log.warning("overlay %s never became ready", oid)
        return out

    def fnd_samples(self) -> list[MetricSample]:
        out = []
        for app in self.apps.values():
            out.extend(getattr(app, "fnd", ()))
        return sorted(out, key=lambda s: (s.at, s.context))

    def metrics(self) -> list[MetricSample]:
        if self.baseline:
            return self.hpd_samples() + self.fnd_samples()
        return self.hpd_samples() + self.ocd_samples() + self.fnd_samples()

    def contours(self) -> list[tuple[int, str, ContourEstimate]]:
        out = []
        for app in self.apps.values():
            for at, est in getattr(app, "contours", ()):
                out.append((at, app.app_id, est))
        return sorted(out, key=lambda c: (c[0], c[1]))

    def emissions(self) -> dict[tuple[str, str], list[tuple[int, float]]]:
        """(node, task) -> emitted (time, value) pairs."""
        out: dict[tuple[str, str], list[tuple[int, float]]] = {}
        for node, rt in sorted(self.vlayer.runtimes.items()):
            for task_id, at, value in rt.emissions:
                out.setdefault((node, task_id), []).append((at, value))
        return out


def build_world(cfg: ScenarioConfig, iteration: int = 0, baseline: bool | None = None) -> World:
    baseline = cfg.baseline_mode if baseline is None else baseline
    seed = derived_seed(cfg.seed, iteration)
    link = replace(cfg.link, jitter_seed=cfg.link.jitter_seed + seed)
    sim = Simulator(link)
    physical = PhysicalLayer([n.node for n in cfg.nodes], cfg.environment)
    physical.validate()
    vlayer = VirtualSensorLayer(physical, seed)

    registry = Registry()
    for n in cfg.nodes:
        node = n.node
        agent = node.gto_ref if node.kind is NodeKind.TYPE_A else node.id
        registry.register(SensorDescriptor(node.id, node.kind, n.quantities, node.position, agent, n.owner))

    world = World(cfg, iteration, baseline, sim, physical, vlayer, registry)
    dialects = {n.node.id: n.dialect for n in cfg.nodes}
    for n in cfg.nodes:
        if not n.node.kind.can_host_agent:
            continue
        ep = Endpoint(sim, n.node.id)
        agent = SensorAgent(sim, ep, physical, vlayer, n.node.id, dialects)
        peer = EdgePeer(sim, ep, cfg.frame_cost, describe=agent.describe)
        agent.overlay_hook = peer.handle_join_command
        install_peer_fca(agent, peer, cfg.compute_cost)
        install_baseline_fca(agent, cfg.compute_cost)
        world.agents[n.node.id] = agent
        world.peers[n.node.id] = peer
    for n in cfg.nodes:
        if n.node.kind is NodeKind.TYPE_A:
            world.delegated[n.node.id] = DelegatedNode(sim, physical, vlayer, n.node.id, n.dialect)
            if cfg.gi_link is not None:
                sim.set_link(n.node.id, n.node.gto_ref, cfg.gi_link)

    params = FcaParams(cfg.lambda_max, cfg.radius)
    for app_cfg in cfg.apps:
        mine = [ts for ts in cfg.tasks if ts.task.app_id == app_cfg.id]
        if baseline:
            # no virtualization: one dedicated task per sensor, for the fire app only
            if app_cfg.role != "fire-contour":
                continue
            mine = [ts for ts in mine if ts.task.task_id == app_cfg.fire_task]
        placements = [TaskPlacement(node, ts.task, ts.path) for ts in mine for node in ts.nodes]
        if app_cfg.role == "fire-contour":
            fire = next(ts for ts in mine if ts.task.task_id == app_cfg.fire_task)
            app = FireContourApp(sim, app_cfg.id, registry, placements, app_cfg.service,
                                 fire_task=app_cfg.fire_task, fire_path=fire.path, params=params,
                                 window_us=cfg.window, debounce_us=cfg.debounce or fire.task.period,
                                 preconfig_cost=cfg.preconfig_cost, baseline=baseline,
                                 iteration=iteration)
        else:
            app = OverlayApplication(sim, app_cfg.id, registry, placements, app_cfg.service, cfg.preconfig_cost)
        world.apps[app_cfg.id] = app
    return world


def run_iteration(cfg: ScenarioConfig, iteration: int = 0, baseline: bool | None = None) -> World:
    return build_world(cfg, iteration, baseline).run()
