import math

import pytest
from hypothesis import given, settings, strategies as st

from vsn.channels import ChannelKind
from vsn.physnode import (Environment, Fire, NodeKind, NoGto, NotTypeA, PhysicalLayer, PhysicalNode,
                          RosterError, UnknownQuantity)
from vsn.simkernel import Simulator, seconds

FIRE = Fire((0.0, 0.0), seconds(10), 200.0, 500.0)


def layer():
    return PhysicalLayer([
        PhysicalNode("gw", NodeKind.GTO, (0, 0)),
        PhysicalNode("a1", NodeKind.TYPE_A, (300, 400), "gw"),
        PhysicalNode("b1", NodeKind.TYPE_B, (250, 0)),
    ], Environment(20.0, FIRE))


def test_defaults_and_roster_rules():
    assert PhysicalNode("a", NodeKind.TYPE_A, gto_ref="g").max_tasks == 2
    assert PhysicalNode("b", "TypeB").max_tasks == 8
    with pytest.raises(RosterError):
        PhysicalNode("a", NodeKind.TYPE_A)
    with pytest.raises(RosterError):
        PhysicalNode("b", NodeKind.TYPE_B, gto_ref="g")
    with pytest.raises(RosterError):
        PhysicalNode("b", NodeKind.TYPE_B, max_tasks=0)
    with pytest.raises(RosterError):
        PhysicalLayer([PhysicalNode("a", NodeKind.TYPE_A, gto_ref="b"),
                       PhysicalNode("b", NodeKind.TYPE_A, gto_ref="a")]).validate()
    assert not NodeKind.TYPE_A.can_host_agent and NodeKind.GTO.can_host_agent


def test_fire_samples_by_hand():
    phys = layer()
    # before ignition: ambient everywhere
    assert phys.sample("a1", "temperature", seconds(9)).value == 20.0
    # a1 is 500 m out: right on the cutoff
    assert phys.sample("a1", "temperature", seconds(10)).value == 20.0
    # b1 at 250 m: 20 + 200 * (1 - 0.5)
    rec = phys.sample("b1", "temperature", seconds(12))
    assert (rec.base_name, rec.name, rec.unit, rec.value, rec.time) == ("b1", "temperature", "Cel", 120.0, 12.0)
    assert phys.environment.temperature((0, 0), seconds(10)) == 220.0


def test_unknown_quantity():
    with pytest.raises(UnknownQuantity):
        layer().sample("b1", "humidity", 0)


@settings(max_examples=200, derandomize=True)
@given(x=st.floats(-1e3, 1e3), y=st.floats(-1e3, 1e3), t=st.integers(0, 10**9))
def test_temperature_is_pure(x, y, t):
    env = Environment(20.0, FIRE)
    a = env.temperature((x, y), t)
    assert a == Environment(20.0, FIRE).temperature((x, y), t)
    assert 20.0 <= a <= 220.0
    if t >= FIRE.start:
        assert math.isclose(a, 20 + 200 * max(0.0, 1 - math.hypot(x, y) / 500), abs_tol=1e-9)


def test_delegation_hop():
    phys = layer()
    sim = Simulator()
    for n in ("gw", "a1", "b1"):
        sim.add_node(n)
    phys.delegate_to_gto(sim, "a1", b"frame", {"kind": "data"})
    e = sim.log[-1]
    assert (e["src"], e["dst"], e["channel"]) == ("a1", "gw", ChannelKind.GI.value)
    with pytest.raises(NotTypeA):
        phys.delegate_to_gto(sim, "b1", b"x")
    assert phys.delegates_of("gw") == ["a1"]
    sim2 = Simulator()
    sim2.add_node("a1")
    with pytest.raises(NoGto):
        phys.delegate_to_gto(sim2, "a1", b"x")
