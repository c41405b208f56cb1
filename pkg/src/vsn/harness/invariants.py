"""Trace-level invariant suites run after every scenario iteration.

Each check reads the simulator's message log (plus a little world state)
and returns human-readable violation strings; an empty list is a pass.
"""

from __future__ import annotations

from ..channels import ChannelKind
from ..overlaynet import GroupState
from ..physnode import NodeKind
from ..wirecodec import CF_SENML_JSON
from .world import World

DI, CI, GI = ChannelKind.DI.value, ChannelKind.CI.value, ChannelKind.GI.value


def _msgs(world: World):
    return [e for e in world.sim.log if e["type"] == "msg"]


def _notes(world: World, kind: str):
    return [e for e in world.sim.log if e["type"] == "note" and e["kind"] == kind]


def path_separation(world: World) -> list[str]:
    """Di carries only SenML data requests; nothing data-shaped travels on Ci."""
    out = []
    for e in _msgs(world):
        ch = e["channel"]
        if ch == CI and (e.get("cf") == CF_SENML_JSON or e.get("kind") == "data"):
            out.append(f"#{e['i']}: data on Ci ({e['src']}->{e['dst']})")
        if ch == DI:
            if e.get("kind") != "data":
                out.append(f"#{e['i']}: non-data message on Di ({e.get('kind')})")
            if e["mtype"] == "CON" and e.get("cf") != CF_SENML_JSON:
                out.append(f"#{e['i']}: Di request without SenML content-format")
    return out


def content_format(world: World) -> list[str]:
    out = [f"{a.app_id}: rejected {a.rejected} data requests" for a in world.apps.values() if a.rejected]
    for e in _msgs(world):
        if e["channel"] == DI and e["mtype"] == "ACK" and e.get("code") != "2.01":
            out.append(f"#{e['i']}: Di POST answered {e.get('code')}")
    return out


def audiences(world: World) -> dict[str, set[str]]:
    aud: dict[str, set[str]] = {}
    for e in _notes(world, "overlay_start"):
        aud.setdefault(e["overlay"], set())
    for app in world.apps.values():
        for oid, group in app.rendezvous.groups.items():
            aud[oid] = set(group.audience)
    return aud


def task_owner(world: World) -> dict[tuple[str, str], str]:
    return {(node, ts.task.task_id): ts.task.app_id for ts in world.cfg.tasks for node in ts.nodes}


def overlay_leaks(world: World) -> list[str]:
    """Messages tagged with an overlay must stay inside its audience; Di data only reaches its owner."""
    aud = audiences(world)
    owner = task_owner(world)
    out = []
    for e in _msgs(world):
        oid = e.get("overlay")
        if oid is not None:
            members = aud.get(oid)
            if members is None:
                out.append(f"#{e['i']}: unknown overlay {oid}")
            elif e["src"] not in members or e["dst"] not in members:
                out.append(f"#{e['i']}: {e['src']}->{e['dst']} outside overlay {oid}")
        if e["channel"] == DI and e["mtype"] == "CON":
            for node, task, _ in e.get("samples", ()):
                if owner.get((node, task)) != e["dst"]:
                    out.append(f"#{e['i']}: sample {node}/{task} delivered to {e['dst']}")
    return out


def no_type_a_members(world: World) -> list[str]:
    kinds = world.cfg.node_kinds
    out = []
    for app in world.apps.values():
        for oid, group in app.rendezvous.groups.items():
            for m in [*group.members, *group.candidates]:
                if kinds.get(m) is NodeKind.TYPE_A:
                    out.append(f"{oid}: Type A node {m} listed as a peer")
    for e in _notes(world, "join"):
        if kinds.get(e["peer"]) is NodeKind.TYPE_A:
            out.append(f"#{e['i']}: Type A node {e['peer']} joined {e['overlay']}")
    return out


def lifecycle_stamps(world: World) -> dict[tuple[str, str], dict[str, int]]:
    stamps: dict[tuple[str, str], dict[str, int]] = {}
    for kind in ("discovery", "join", "task_delivery", "first_data"):
        for e in _notes(world, kind):
            stamps.setdefault((e["overlay"], e["peer"]), {}).setdefault(kind, e["at"])
    return stamps


def lifecycle_order(world: World) -> list[str]:
    """discovery < join < task delivery < first Di data, per overlay member."""
    out = []
    steps = ("discovery", "join", "task_delivery", "first_data")
    members = {(oid, m) for app in world.apps.values()
               for oid, g in app.rendezvous.groups.items() for m in g.members}
    for key, st in sorted(lifecycle_stamps(world).items()):
        if key not in members:
            continue
        for a, b in zip(steps, steps[1:]):
            if b not in st:
                if b != "first_data":
                    out.append(f"{key}: missing {b}")
                break
            if a not in st or not st[a] < st[b]:
                out.append(f"{key}: {a}={st.get(a)} !< {b}={st[b]}")
    return out


def delegation(world: World) -> list[str]:
    """Every Type A sample crosses exactly one Gi hop, to its own GTO, before Di."""
    kinds = world.cfg.node_kinds
    gi_count: dict[tuple, int] = {}
    out = []
    for e in _msgs(world):
        if e["channel"] == GI and e["mtype"] == "CON" and e.get("kind") == "data":
            if kinds.get(e["src"]) is not NodeKind.TYPE_A or world.physical[e["src"]].gto_ref != e["dst"]:
                out.append(f"#{e['i']}: Gi data {e['src']}->{e['dst']} is not Type A -> own GTO")
            for s in e.get("samples", ()):
                gi_count[tuple(s)] = gi_count.get(tuple(s), 0) + 1
    for e in _msgs(world):
        if e["channel"] == DI and e["mtype"] == "CON":
            for s in e.get("samples", ()):
                if kinds.get(s[0]) is NodeKind.TYPE_A and gi_count.get(tuple(s), 0) != 1:
                    out.append(f"#{e['i']}: sample {s} crossed {gi_count.get(tuple(s), 0)} Gi hops")
    return out


HETEROGENEITY_GRACE_US = 1_000_000  # an emission this close to the end may still be in flight


def heterogeneity(world: World) -> list[str]:
    """An app served by both sensor kinds hears from every kind that emitted for it."""
    kinds = world.cfg.node_kinds
    owner = task_owner(world)
    cutoff = world.sim.now - HETEROGENEITY_GRACE_US
    out = []
    for app in world.apps.values():
        placed = {kinds[p.node] for p in app.placements}
        if not {NodeKind.TYPE_A, NodeKind.TYPE_B} <= placed:
            continue
        emitted = {kinds[node] for (node, task), trace in world.emissions().items()
                   if owner.get((node, task)) == app.app_id and trace[0][0] <= cutoff}
        seen = {kinds.get(r.base_name) for _, _, recs in app.batches for r in recs}
        for k in sorted(emitted - seen, key=lambda k: k.value):
            out.append(f"{app.app_id}: no data from any {k.value} node")
    return out


def hpd_spike(world: World) -> list[str]:
    link = world.sim.default_link
    if link.session_setup_delay == 0 or link.jitter_max != 0:
        return []
    out = []
    for ctx, series in world.hpd_series().items():
        if len(series) > 1 and not series[0].value > max(s.value for s in series[1:]):
            out.append(f"{ctx}: first HPD {series[0].value} ms is not the maximum")
    return out


def group_states(world: World) -> list[str]:
    out = []
    for app in world.apps.values():
        for oid, g in app.rendezvous.groups.items():
            if g.failed:
                out.append(f"{oid}: failed ({g.failed})")
            if g.state >= GroupState.READY and g.ready_at is None:
                out.append(f"{oid}: {g.state.name} without ready time")
            if g.state >= GroupState.READY and set(g.delivered) != set(g.members):
                out.append(f"{oid}: ready before every member received its tasks")
    return out


def causality(world: World) -> list[str]:
    out = []
    for e in _msgs(world):
        floor = world.sim.link_for(e["src"], e["dst"]).base_delay
        if e["deliver_at"] < e["sent_at"] + floor:
            out.append(f"#{e['i']}: delivered before send + minimum delay")
    return out


SUITES = {
    "path_separation": path_separation,
    "content_format": content_format,
    "overlay_isolation": overlay_leaks,
    "no_type_a_members": no_type_a_members,
    "lifecycle_order": lifecycle_order,
    "delegation": delegation,
    "heterogeneity": heterogeneity,
    "hpd_first_sample_spike": hpd_spike,
    "group_states": group_states,
    "causality": causality,
}


def check_all(world: World) -> dict[str, list[str]]:
    return {name: fn(world) for name, fn in SUITES.items()}
