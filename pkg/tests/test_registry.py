import random

import pytest
from hypothesis import given, settings, strategies as st

from vsn.physnode import NodeKind
from vsn.registry import DuplicateRegistration, Registry, RegistryError, SensorDescriptor


def roster(seed=0, n=30):
    rng = random.Random(seed)
    out = []
    for i in range(n):
        kind = rng.choice(list(NodeKind))
        out.append(SensorDescriptor(
            f"n{i:03d}", kind, () if kind is NodeKind.GTO else rng.sample(["temperature", "smoke", "co2"], rng.randint(1, 2)),
            (rng.uniform(0, 100), rng.uniform(0, 100)), f"agent-{rng.randint(0, 3)}", rng.choice(["city", "home", ""])))
    rng.shuffle(out)
    return out


def scan(descs, quantity=None, kind=None, region=None, owner=None):
    """Linear-scan oracle."""
    hits = []
    for d in descs:
        if quantity is not None and quantity not in d.quantities:
            continue
        if kind is not None and d.kind != kind:
            continue
        if region is not None:
            (x0, y0), (x1, y1) = region
            if not (min(x0, x1) <= d.position[0] <= max(x0, x1) and min(y0, y1) <= d.position[1] <= max(y0, y1)):
                continue
        if owner is not None and d.owner != owner:
            continue
        hits.append(d)
    return sorted(hits, key=lambda d: d.node_id)


@settings(max_examples=300, derandomize=True)
@given(seed=st.integers(0, 1000),
       quantity=st.sampled_from([None, "temperature", "smoke", "co2", "rain"]),
       kind=st.sampled_from([None, *NodeKind]),
       region=st.none() | st.tuples(st.tuples(st.floats(0, 100), st.floats(0, 100)),
                                    st.tuples(st.floats(0, 100), st.floats(0, 100))),
       owner=st.sampled_from([None, "city", "home", ""]))
def test_query_matches_linear_scan(seed, quantity, kind, region, owner):
    descs = roster(seed)
    reg = Registry(descs)
    got = reg.query(quantity, kind, region, owner)
    assert got == scan(descs, quantity, kind, region, owner)
    assert set(got) <= set(reg.query())


def test_region_is_inclusive():
    reg = Registry([SensorDescriptor("s", NodeKind.TYPE_B, ["temperature"], (10, 10), "s")])
    assert reg.query(region=((10, 10), (20, 20)))
    assert reg.query(region=((20, 20), (10, 10)))
    assert not reg.query(region=((10.001, 0), (20, 20)))


def test_json_roundtrip(tmp_path):
    reg = Registry(roster(3))
    reg.save(tmp_path / "r.json")
    back = Registry.load(tmp_path / "r.json")
    assert back.query() == reg.query()
    assert back.to_json() == reg.to_json()


def test_errors():
    d = SensorDescriptor("s", NodeKind.TYPE_B, ["temperature"], (0, 0), "s")
    reg = Registry([d])
    with pytest.raises(DuplicateRegistration):
        reg.register(d)
    with pytest.raises(RegistryError):
        SensorDescriptor("s", NodeKind.TYPE_A, [], (0, 0), "g")
    with pytest.raises(RegistryError):
        SensorDescriptor("s", NodeKind.TYPE_B, ["temperature"], (0, 0), "")
    with pytest.raises(RegistryError):
        Registry.from_json({"not": "a list"})
    with pytest.raises(RegistryError):
        SensorDescriptor.from_json({"node_id": "x"})
    assert reg.get("nope") is None


def test_agent_host_skips_type_a():
    reg = Registry([
        SensorDescriptor("a1", NodeKind.TYPE_A, ["temperature"], (0, 0), "gw"),
        SensorDescriptor("gw", NodeKind.GTO, [], (0, 0), "gw"),
    ])
    assert reg.agent_host("gw") == "gw"
    assert reg.agent_host("missing") is None
