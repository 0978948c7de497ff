"""Canonical network scenario generation and validation.

Four scenario families (data-center Clos, 3-tier campus, meshed ISP
backbone, cloud POP fabric) are generated at three size classes from
fixed parametric tables, so the same (scenario, size, seed) triple always
yields a byte-identical topology.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

SCENARIOS = ("datacenter_clos", "campus_3tier", "isp_mesh", "cloud_pop_fabric")
SIZES = ("S", "M", "L")
NODE_KINDS = ("host", "switch", "router", "controller")

# Egress buffer per link direction, bytes.
DEFAULT_BUFFER = 262144
DEFAULT_MTU = 1500
DEFAULT_DELAY_MS = 1.0
HOST_LINK_MBPS = 100.0
FABRIC_LINK_MBPS = 400.0
DEFAULT_SERVICE_RPS = 100

BLACKHOLE = "BLACKHOLE"
UNREACHABLE = "UNREACHABLE"

MTU_MIN, MTU_MAX = 576, 9216


@dataclass
class InterfaceConfig:
    id: str
    ip: str
    netmask: int  # prefix length the node believes is on-link
    mtu: int = DEFAULT_MTU
    admin_state: str = "up"


@dataclass
class AclRule:
    action: str  # "deny" | "permit"
    proto: str = "any"  # "any" | "icmp" | "tcp"
    ports: tuple = ()  # empty = all ports (tcp only)


@dataclass
class ServiceConfig:
    port: int = 80
    capacity_rps: int = DEFAULT_SERVICE_RPS


@dataclass
class NodeConfig:
    acl_rules: list = field(default_factory=list)  # ordered, first match wins
    static_routes: list = field(default_factory=list)  # (prefix, next_hop NodeId | BLACKHOLE)
    ospf_area_by_interface: dict = field(default_factory=dict)
    services: list = field(default_factory=list)


@dataclass
class Node:
    id: str
    kind: str
    interfaces: list = field(default_factory=list)
    status: str = "up"  # "up" | "crashed"
    config: NodeConfig = field(default_factory=NodeConfig)

    def interface(self, intf_id: str) -> InterfaceConfig:
        for itf in self.interfaces:
            if itf.id == intf_id:
                return itf
        raise KeyError(f"{self.id} has no interface {intf_id}")


@dataclass
class Link:
    endpoint_a: tuple  # (node_id, interface_id)
    endpoint_b: tuple
    capacity: float  # Mb/s per direction
    propagation_delay: float = DEFAULT_DELAY_MS  # ms
    state: str = "up"  # "up" | "down" | "detached"
    error_rate: float = 0.0
    buffer: int = DEFAULT_BUFFER  # egress queue bytes, per direction

    def other_end(self, node_id: str) -> tuple:
        if self.endpoint_a[0] == node_id:
            return self.endpoint_b
        if self.endpoint_b[0] == node_id:
            return self.endpoint_a
        raise KeyError(f"link does not touch {node_id}")


@dataclass
class Topology:
    scenario: str
    size: str
    seed: int
    nodes: list = field(default_factory=list)
    links: list = field(default_factory=list)

    def node(self, node_id: str) -> Node:
        n = self.node_map().get(node_id)
        if n is None:
            raise KeyError(f"unknown node {node_id}")
        return n

    def node_map(self) -> dict:
        cached = getattr(self, "_node_map", None)
        if cached is None or len(cached) != len(self.nodes):
            cached = {n.id: n for n in self.nodes}
            object.__setattr__(self, "_node_map", cached)
        return cached

    def links_of(self, node_id: str) -> list:
        return [l for l in self.links if node_id in (l.endpoint_a[0], l.endpoint_b[0])]

    def hosts(self) -> list:
        return [n for n in self.nodes if n.kind == "host"]


# --- size tables -------------------------------------------------------------
# Concrete per-scenario counts: the cross-scenario means for S/M/L land near
# 11 / 27 / 101 nodes. The per-scenario splits are a calibration choice.

_DC_SIZES = {"S": (2, 4, 8), "M": (4, 8, 24), "L": (8, 16, 80)}  # spine, leaf, host
_CAMPUS_SIZES = {"S": (1, 2, 3, 4), "M": (2, 4, 8, 14), "L": (4, 10, 30, 56)}  # core, dist, access, host
_ISP_SIZES = {"S": (4, 3, 2), "M": (6, 8, 12), "L": (12, 30, 60)}  # core, access, host
_POP_SIZES = {"S": (1, 2, 4, 4), "M": (1, 4, 8, 14), "L": (1, 8, 24, 68)}  # ctl, spine, edge, host


class _Builder:
    """Accumulates nodes/links and hands out deterministic addresses."""

    def __init__(self):
        self.nodes = []
        self.links = []
        self._subnet_counter = 0
        self._intf_counter = {}

    def subnet(self) -> str:
        k = self._subnet_counter
        self._subnet_counter += 1
        return f"10.{k // 256}.{k % 256}"

    def add_node(self, node_id, kind, services=None):
        cfg = NodeConfig(services=list(services or []))
        node = Node(id=node_id, kind=kind, config=cfg)
        self.nodes.append(node)
        return node

    def _next_intf(self, node):
        i = self._intf_counter.get(node.id, 0)
        self._intf_counter[node.id] = i + 1
        return f"eth{i}"

    def attach(self, node, ip, netmask):
        itf = InterfaceConfig(id=self._next_intf(node), ip=ip, netmask=netmask)
        node.interfaces.append(itf)
        node.config.ospf_area_by_interface[itf.id] = 0
        return itf

    def p2p_link(self, a, b, capacity):
        net = self.subnet()
        ia = self.attach(a, f"{net}.1", 30)
        ib = self.attach(b, f"{net}.2", 30)
        self.links.append(Link((a.id, ia.id), (b.id, ib.id), capacity))

    def host_subnet(self, gateway, hosts):
        """One shared /24 per gateway switch; hosts get .10, .11, ..."""
        net = self.subnet()
        for idx, h in enumerate(hosts):
            gw_itf = self.attach(gateway, f"{net}.1", 24)
            h_itf = self.attach(h, f"{net}.{10 + idx}", 24)
            h.config.static_routes.append(("0.0.0.0/0", gateway.id))
            self.links.append(Link((gateway.id, gw_itf.id), (h.id, h_itf.id), HOST_LINK_MBPS))


def _host(b, node_id):
    return b.add_node(node_id, "host", services=[ServiceConfig()])


def _build_datacenter_clos(b, size):
    n_spine, n_leaf, n_host = _DC_SIZES[size]
    spines = [b.add_node(f"spine.s{i}", "switch") for i in range(n_spine)]
    n_pods = n_leaf // 2
    leaves, hosts_by_leaf = [], []
    per_leaf = n_host // n_leaf
    for p in range(n_pods):
        for j in range(2):
            leaf = b.add_node(f"pod{p}.leaf{j}", "switch")
            leaves.append(leaf)
            lhosts = [_host(b, f"pod{p}.h{j * per_leaf + k}") for k in range(per_leaf)]
            hosts_by_leaf.append((leaf, lhosts))
    for leaf in leaves:
        for spine in spines:
            b.p2p_link(leaf, spine, FABRIC_LINK_MBPS)
    for leaf, lhosts in hosts_by_leaf:
        b.host_subnet(leaf, lhosts)


def _build_campus_3tier(b, size):
    n_core, n_dist, n_acc, n_host = _CAMPUS_SIZES[size]
    cores = [b.add_node(f"core.r{i}", "router") for i in range(n_core)]
    dists = [b.add_node(f"dist.d{i}", "router") for i in range(n_dist)]
    accs = [b.add_node(f"acc{i}.sw", "switch") for i in range(n_acc)]
    hosts = [[] for _ in range(n_acc)]
    for k in range(n_host):
        a = k % n_acc
        hosts[a].append(_host(b, f"acc{a}.h{k // n_acc}"))
    for c in cores:
        for d in dists:
            b.p2p_link(c, d, FABRIC_LINK_MBPS)
    for i, a in enumerate(accs):
        uplinks = {i % n_dist, (i + 1) % n_dist}
        for d in sorted(uplinks):
            b.p2p_link(dists[d], a, FABRIC_LINK_MBPS)
    for a, ahosts in zip(accs, hosts):
        if ahosts:
            b.host_subnet(a, ahosts)


def _build_isp_mesh(b, size):
    n_core, n_acc, n_host = _ISP_SIZES[size]
    cores = [b.add_node(f"core.r{i}", "router") for i in range(n_core)]
    accs = [b.add_node(f"pop{i}.ar", "router") for i in range(n_acc)]
    hosts = [[] for _ in range(n_acc)]
    for k in range(n_host):
        a = k % n_acc
        hosts[a].append(_host(b, f"pop{a}.h{k // n_acc}"))
    for i in range(n_core):
        for j in range(i + 1, n_core):
            b.p2p_link(cores[i], cores[j], FABRIC_LINK_MBPS)
    for i, a in enumerate(accs):
        uplinks = {i % n_core, (i + 1) % n_core}
        for c in sorted(uplinks):
            b.p2p_link(cores[c], a, FABRIC_LINK_MBPS)
    for a, ahosts in zip(accs, hosts):
        if ahosts:
            b.host_subnet(a, ahosts)


def _build_cloud_pop_fabric(b, size):
    n_ctl, n_spine, n_edge, n_host = _POP_SIZES[size]
    ctls = [b.add_node(f"mgmt.ctl{i}", "controller") for i in range(n_ctl)]
    spines = [b.add_node(f"fabric.s{i}", "switch") for i in range(n_spine)]
    edges = [b.add_node(f"edge{i}.sw", "switch") for i in range(n_edge)]
    hosts = [[] for _ in range(n_edge)]
    for k in range(n_host):
        e = k % n_edge
        hosts[e].append(_host(b, f"edge{e}.h{k // n_edge}"))
    # Controllers are plain management nodes; they never carry transit traffic.
    for c in ctls:
        for s in spines:
            b.p2p_link(c, s, HOST_LINK_MBPS)
    for e in edges:
        for s in spines:
            b.p2p_link(e, s, FABRIC_LINK_MBPS)
    for e, ehosts in zip(edges, hosts):
        if ehosts:
            b.host_subnet(e, ehosts)


_BUILDERS = {
    "datacenter_clos": _build_datacenter_clos,
    "campus_3tier": _build_campus_3tier,
    "isp_mesh": _build_isp_mesh,
    "cloud_pop_fabric": _build_cloud_pop_fabric,
}


def build_scenario(scenario: str, size: str, seed: int) -> Topology:
    """Build one of the canonical scenarios at the given size class.

    A pure function: identical inputs give identical output, including
    node/link ordering and address assignment. The seed is recorded on the
    topology (it drives workload and injection randomness downstream, not
    the structure).
    """
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    if size not in SIZES:
        raise ValueError(f"unknown size {size!r}; expected one of {SIZES}")
    b = _Builder()
    _BUILDERS[scenario](b, size)
    return Topology(scenario=scenario, size=size, seed=int(seed), nodes=b.nodes, links=b.links)


def entity_universe(topo: Topology) -> list:
    """All (node, component) pairs a localization answer ranges over.

    Deterministic ordering: lexicographic by node id, then by component
    name. Per node the components are its interface ids plus "system",
    "routing", "acl", and "service" when the node runs one.
    """
    out = []
    for node in topo.nodes:
        comps = [itf.id for itf in node.interfaces] + ["system", "routing", "acl"]
        if node.config.services:
            comps.append("service")
        out.extend((node.id, c) for c in sorted(comps))
    out.sort()
    return out


def validate(topo: Topology) -> list:
    """Check structural invariants; returns one message per violation."""
    violations = []
    seen = set()
    for node in topo.nodes:
        if node.id in seen:
            violations.append(f"node {node.id}: duplicate id")
        seen.add(node.id)
        if node.kind not in NODE_KINDS:
            violations.append(f"node {node.id}: unknown kind {node.kind!r}")
        if node.status not in ("up", "crashed"):
            violations.append(f"node {node.id}: invalid status {node.status!r}")
        intf_seen = set()
        for itf in node.interfaces:
            if itf.id in intf_seen:
                violations.append(f"node {node.id}: duplicate interface {itf.id}")
            intf_seen.add(itf.id)
            if not (MTU_MIN <= itf.mtu <= MTU_MAX):
                violations.append(f"node {node.id} {itf.id}: mtu {itf.mtu} outside [{MTU_MIN}, {MTU_MAX}]")
            if not (0 <= itf.netmask <= 32):
                violations.append(f"node {node.id} {itf.id}: netmask /{itf.netmask} outside [0, 32]")
            if itf.admin_state not in ("up", "down"):
                violations.append(f"node {node.id} {itf.id}: invalid admin_state {itf.admin_state!r}")
        if node.kind == "host":
            if len(node.interfaces) != 1:
                violations.append(f"node {node.id}: host must have exactly one data interface, has {len(node.interfaces)}")
    node_map = {n.id: n for n in topo.nodes}
    for idx, link in enumerate(topo.links):
        tag = f"link[{idx}] {link.endpoint_a[0]}<->{link.endpoint_b[0]}"
        if link.capacity <= 0:
            violations.append(f"{tag}: nonpositive capacity")
        if not (0.0 <= link.error_rate <= 1.0):
            violations.append(f"{tag}: error_rate {link.error_rate} outside [0, 1]")
        if link.state not in ("up", "down", "detached"):
            violations.append(f"{tag}: invalid state {link.state!r}")
        for node_id, intf_id in (link.endpoint_a, link.endpoint_b):
            node = node_map.get(node_id)
            if node is None:
                violations.append(f"{tag}: endpoint node {node_id} does not exist")
                continue
            if all(itf.id != intf_id for itf in node.interfaces):
                violations.append(f"{tag}: endpoint interface {node_id}/{intf_id} does not exist")
    return violations


# --- serialization -----------------------------------------------------------

def topology_to_dict(topo: Topology) -> dict:
    return {
        "scenario": topo.scenario,
        "size": topo.size,
        "seed": topo.seed,
        "nodes": [
            {
                "id": n.id,
                "kind": n.kind,
                "status": n.status,
                "interfaces": [
                    {"id": i.id, "ip": i.ip, "netmask": i.netmask, "mtu": i.mtu, "admin_state": i.admin_state}
                    for i in n.interfaces
                ],
                "config": {
                    "acl_rules": [
                        {"action": r.action, "proto": r.proto, "ports": list(r.ports)} for r in n.config.acl_rules
                    ],
                    "static_routes": [list(sr) for sr in n.config.static_routes],
                    "ospf_area_by_interface": dict(n.config.ospf_area_by_interface),
                    "services": [{"port": s.port, "capacity_rps": s.capacity_rps} for s in n.config.services],
                },
            }
            for n in topo.nodes
        ],
        "links": [
            {
                "endpoint_a": list(l.endpoint_a),
                "endpoint_b": list(l.endpoint_b),
                "capacity": l.capacity,
                "propagation_delay": l.propagation_delay,
                "state": l.state,
                "error_rate": l.error_rate,
                "buffer": l.buffer,
            }
            for l in topo.links
        ],
    }


def topology_from_dict(doc: dict) -> Topology:
    nodes = []
    for nd in doc["nodes"]:
        cfg = nd.get("config", {})
        nodes.append(
            Node(
                id=nd["id"],
                kind=nd["kind"],
                status=nd.get("status", "up"),
                interfaces=[
                    InterfaceConfig(
                        id=i["id"],
                        ip=i["ip"],
                        netmask=i["netmask"],
                        mtu=i.get("mtu", DEFAULT_MTU),
                        admin_state=i.get("admin_state", "up"),
                    )
                    for i in nd.get("interfaces", [])
                ],
                config=NodeConfig(
                    acl_rules=[
                        AclRule(action=r["action"], proto=r.get("proto", "any"), ports=tuple(r.get("ports", ())))
                        for r in cfg.get("acl_rules", [])
                    ],
                    static_routes=[tuple(sr) for sr in cfg.get("static_routes", [])],
                    ospf_area_by_interface=dict(cfg.get("ospf_area_by_interface", {})),
                    services=[
                        ServiceConfig(port=s.get("port", 80), capacity_rps=s.get("capacity_rps", DEFAULT_SERVICE_RPS))
                        for s in cfg.get("services", [])
                    ],
                ),
            )
        )
    links = [
        Link(
            endpoint_a=tuple(ld["endpoint_a"]),
            endpoint_b=tuple(ld["endpoint_b"]),
            capacity=ld["capacity"],
            propagation_delay=ld.get("propagation_delay", DEFAULT_DELAY_MS),
            state=ld.get("state", "up"),
            error_rate=ld.get("error_rate", 0.0),
            buffer=ld.get("buffer", DEFAULT_BUFFER),
        )
        for ld in doc["links"]
    ]
    return Topology(scenario=doc["scenario"], size=doc["size"], seed=doc["seed"], nodes=nodes, links=links)


def topology_to_json(topo: Topology) -> str:
    return json.dumps(topology_to_dict(topo), sort_keys=True, indent=2) + "\n"
