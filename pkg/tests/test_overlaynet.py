import pytest

from conftest import run_doc, scenario_doc
from vsn.harness.config import parse_config
from vsn.harness.world import build_world
from vsn.overlaynet import (FrameKind, GroupState, NoCandidates, NotMember, OverlayError,
                            OverlayGroup, OverlayMessage, OverlayNotReady)
from vsn.sensoragent import ControlCommand, Verb, control_request
from vsn.simkernel import seconds

CITY = "city-admin:FireContourService"
HOME = "home-assoc:HomeMonitoring"


def quiet_doc(**link):
    doc = scenario_doc()
    doc["duration_s"] = 30
    doc["link"] = {"propagation_ms": 0, "processing_ms": 0, "session_setup_ms": 0,
                   "jitter_max_ms": 0, **link}
    doc["gi_link"] = dict(doc["link"])
    doc["overlay"] = {"preconfig_ms": 250.0, "frame_cost_ms": 0.0}
    doc["control"] = []
    return doc


def test_frame_roundtrip_and_errors():
    m = OverlayMessage(FrameKind.GROUP_MULTICAST, "o", "city", {"type": "fire-notification", "n": 1})
    data = m.encode()
    assert data[0] == 4
    assert OverlayMessage.decode(data) == m
    for bad in (b"", b"\x09{}", b"\x01not json", b'\x01{"overlay": "o"}'):
        with pytest.raises(OverlayError):
            OverlayMessage.decode(bad)


def test_state_machine_only_moves_forward():
    g = OverlayGroup("o", "r", "svc", 0)
    with pytest.raises(OverlayError):
        g.advance(GroupState.ACTIVE)
    g.advance(GroupState.READY)
    g.advance(GroupState.ACTIVE)
    with pytest.raises(OverlayError):
        g.advance(GroupState.READY)


def test_two_overlays_share_gateways(city_world):
    city = city_world.apps["city-admin"].group
    home = city_world.apps["home-assoc"].group
    assert city.members == ["gw-1", "gw-2", "gw-3", "sensor-05", "sensor-06"]
    assert home.members == ["gw-1", "gw-2", "gw-3"]
    assert city.state is GroupState.ACTIVE and home.state is GroupState.ACTIVE
    assert city_world.peers["gw-1"].memberships == {CITY: "city-admin", HOME: "home-assoc"}


def test_lifecycle_steps_in_order(city_world):
    from vsn.harness.invariants import lifecycle_stamps
    stamps = lifecycle_stamps(city_world)
    assert len(stamps) == 8
    for (oid, peer), st in stamps.items():
        assert st["discovery"] < st["join"] < st["task_delivery"] < st["first_data"], (oid, peer)


def test_zero_latency_ocd_is_the_local_setup_cost():
    world = run_doc(quiet_doc())
    assert [s.value for s in world.ocd_samples()] == [250.0, 250.0]


def test_ocd_grows_with_link_delay():
    ocd = [run_doc(quiet_doc(propagation_ms=d)).ocd_samples()[0].value for d in (0.5, 1, 2, 4, 8)]
    assert all(a < b for a, b in zip(ocd, ocd[1:]))


def test_symmetric_round_fnd_is_two_d_plus_c():
    doc = quiet_doc(propagation_ms=5.0)
    doc["fca"]["compute_ms"] = 2.0
    fnd = run_doc(doc).fnd_samples()
    assert fnd and {s.value for s in fnd} == {12.0}


def test_declines_and_late_join():
    cfg = parse_config(quiet_doc(propagation_ms=1.0))
    world = build_world(cfg)
    world.peers["gw-3"].accept = lambda ad: ad.service_name != "FireContourService"
    world.run()
    city = world.apps["city-admin"]
    assert city.group.declined == ["gw-3"]
    assert "gw-3" not in city.group.members and city.group.state is GroupState.ACTIVE
    assert world.agents["gw-3"].routes.get(("sensor-04", "fire-detect")) is None

    # the peer changes its mind and is told to join out of band
    world.peers["gw-3"].accept = lambda ad: True
    cmd = ControlCommand(Verb.JOIN_OVERLAY, "gw-3", {"overlay_id": CITY, "service_name": "FireContourService",
                                                   "rendezvous": "city-admin"})
    codes = []
    control_request(city.endpoint, "gw-3", "gw-3", cmd, lambda ex: codes.append(ex.response.code.dotted))
    world.sim.run_until(world.sim.now + seconds(1))
    assert codes == ["2.04"]
    assert "gw-3" in city.group.members and city.group.declined == []
    assert world.agents["gw-3"].routes[("sensor-04", "fire-detect")].app == "city-admin"


def test_all_declined_fails():
    cfg = parse_config(quiet_doc())
    world = build_world(cfg)
    for p in world.peers.values():
        p.accept = lambda ad: False
    world.run()
    for app in world.apps.values():
        assert app.group.failed == "AllDeclined" and app.group.state is GroupState.FORMING
    assert world.ocd_samples() == []


def test_candidates_and_membership_errors():
    world = build_world(parse_config(quiet_doc()))
    rv = world.apps["city-admin"].rendezvous
    with pytest.raises(NoCandidates):
        rv.create_overlay("x", [])
    group = rv.create_overlay("ghost", ["nobody"])
    world.sim.run_until(seconds(1))
    assert group.failed == "NoCandidates"
    g = rv.create_overlay("svc", ["sensor-01"])
    with pytest.raises(OverlayNotReady):
        rv.multicast(g.overlay_id, rv.node_id, {})
    with pytest.raises(NotMember):
        rv.multicast(g.overlay_id, "gw-2", {})
    with pytest.raises(NotMember):
        world.peers["gw-1"].multicast("nope", {})
    # Type A candidates resolve to their gateway
    assert rv.resolve(["sensor-01", "sensor-02", "sensor-05"]) == ["gw-1", "sensor-05"]


def test_member_multicast_and_direct_reply():
    world = build_world(parse_config(quiet_doc(propagation_ms=1.0)))
    world.run()
    home = world.apps["home-assoc"]
    direct = []
    home.rendezvous.on_direct = direct.append
    world.peers["gw-1"].multicast(HOME, {"type": "hello"})
    at = world.peers["gw-2"].direct_reply(HOME, "home-assoc", {"type": "status"})
    world.sim.run_until(world.sim.now + seconds(1))
    assert world.peers["gw-2"].inbox[-1].payload == {"type": "hello"}
    assert world.peers["gw-3"].inbox[-1].sender == "gw-1"
    assert all(m.payload != {"type": "hello"} for m in world.peers["gw-1"].inbox)
    assert [m.payload for m in direct] == [{"type": "status"}]
    reply = next(e for e in world.sim.log if e.get("frame") == "DIRECT_REPLY" and e["src"] == "gw-2"
                 and e["mtype"] == "CON")
    assert reply["deliver_at"] == at
