import pytest

from netarena.topology import (
    SCENARIOS,
    SIZES,
    InterfaceConfig,
    Node,
    Topology,
    build_scenario,
    entity_universe,
    topology_from_dict,
    topology_to_dict,
    topology_to_json,
    validate,
)

ALL = [(s, z) for s in SCENARIOS for z in SIZES]


@pytest.mark.parametrize("scenario,size", ALL)
def test_generation_is_pure(scenario, size):
    a = topology_to_json(build_scenario(scenario, size, 7))
    b = topology_to_json(build_scenario(scenario, size, 7))
    assert a == b


@pytest.mark.parametrize("scenario,size", ALL)
def test_fresh_scenarios_validate_clean(scenario, size):
    assert validate(build_scenario(scenario, size, 0)) == []


def test_datacenter_small_shape():
    t = build_scenario("datacenter_clos", "S", 0)
    kinds = {}
    for n in t.nodes:
        kinds[n.kind] = kinds.get(n.kind, 0) + 1
    assert len(t.nodes) == 14
    assert len(t.links) == 16
    assert kinds == {"switch": 6, "host": 8}


def test_isp_small_shape():
    t = build_scenario("isp_mesh", "S", 0)
    routers = [n for n in t.nodes if n.kind == "router"]
    hosts = [n for n in t.nodes if n.kind == "host"]
    assert len(t.nodes) == 9
    assert len(routers) == 7  # 4 full-mesh core + 3 access
    assert len(hosts) == 2
    core = [r for r in routers if r.id.startswith("core.")]
    core_links = [
        l for l in t.links
        if l.endpoint_a[0].startswith("core.") and l.endpoint_b[0].startswith("core.")
    ]
    assert len(core) == 4 and len(core_links) == 6  # full mesh


def test_size_class_means_track_targets():
    targets = {"S": 11, "M": 27, "L": 101}
    for size, target in targets.items():
        counts = [len(build_scenario(s, size, 0).nodes) for s in SCENARIOS]
        mean = sum(counts) / len(counts)
        assert abs(mean - target) / target <= 0.30, (size, mean)


@pytest.mark.parametrize("scenario", SCENARIOS)
def test_monotone_sizing(scenario):
    s, m, l = (len(build_scenario(scenario, z, 0).nodes) for z in SIZES)
    assert s < m < l


def test_validate_flags_duplicate_node():
    t = build_scenario("datacenter_clos", "S", 0)
    t.nodes.append(t.nodes[0])
    msgs = validate(t)
    assert any("duplicate id" in m for m in msgs)


def test_validate_flags_nonpositive_capacity():
    t = build_scenario("datacenter_clos", "S", 0)
    t.links[0].capacity = 0
    msgs = validate(t)
    assert any("nonpositive capacity" in m for m in msgs)


def test_validate_flags_host_with_two_interfaces():
    t = build_scenario("datacenter_clos", "S", 0)
    host = t.hosts()[0]
    host.interfaces.append(InterfaceConfig(id="eth1", ip="10.99.0.1", netmask=24))
    msgs = validate(t)
    assert any("exactly one data interface" in m for m in msgs)


def test_entity_universe_single_host():
    t = Topology(
        scenario="datacenter_clos",
        size="S",
        seed=0,
        nodes=[Node(id="h", kind="host", interfaces=[InterfaceConfig(id="eth0", ip="10.0.0.10", netmask=24)])],
        links=[],
    )
    assert entity_universe(t) == [("h", "acl"), ("h", "eth0"), ("h", "routing"), ("h", "system")]


def test_entity_universe_deterministic_and_sorted():
    t = build_scenario("campus_3tier", "M", 3)
    u1 = entity_universe(t)
    u2 = entity_universe(t)
    assert u1 == u2
    assert u1 == sorted(u1)
    # every host runs a service, so it contributes a service component
    host = t.hosts()[0].id
    assert (host, "service") in u1
    # leaf switches contribute each interface plus the fixed components
    sw = next(n for n in t.nodes if n.kind == "switch")
    comps = [c for (n, c) in u1 if n == sw.id]
    assert set(comps) == {i.id for i in sw.interfaces} | {"system", "routing", "acl"}


def test_serialization_round_trip():
    t = build_scenario("cloud_pop_fabric", "M", 11)
    doc = topology_to_dict(t)
    back = topology_from_dict(doc)
    assert topology_to_dict(back) == doc
    assert topology_to_json(back) == topology_to_json(t)
