"""Deterministic discrete-time fluid simulation of a network.

Flows are continuous byte streams, not packets: each tick the simulator
computes bounded max-min fair through-rates for every routable flow,
moves integer byte amounts across links, accumulates excess load in the
binding link's egress queue, and drops on buffer overflow. All byte
accounting is integer arithmetic so per-link conservation is exact.

Transport conventions (intentional simplifications, kept deterministic):
- Elastic flows (tcp_bulk) back off to their fair share and never queue;
  inelastic flows (udp, http) keep pushing their demand and queue the
  excess at the link whose share constrained them.
- Queued bytes, once drained, are credited straight to their flow's
  destination rather than re-traversing downstream links.
- ACL-denied, unroutable, looping, and MTU-violating flows consume no
  link bandwidth; their offered bytes are counted as losses where the
  failure occurs.
- CRC thinning applies to through-traffic hop by hop; drained queue bytes
  skip it.
"""

from __future__ import annotations

import copy
import hashlib
import heapq
import ipaddress
import json
import random
from dataclasses import dataclass, field

from .topology import BLACKHOLE, UNREACHABLE, Topology

TICK_MS_DEFAULT = 10
HOP_BUDGET = 30
BYTES_PER_MBPS_MS = 125  # 1 Mb/s == 125 bytes per ms

# Fixed log templates, one per observable condition, so operators and
# agents can grep for them.
LOG_LINK_DOWN = "LINK_DOWN {intf}: Interface state down"
LOG_LINK_DETACHED = "PHY_DOWN {intf}: Physical link not detected; PHY down"
LOG_LINK_FLAP_DOWN = "LINK_FLAP {intf} down"
LOG_LINK_FLAP_UP = "LINK_FLAP {intf} up"
LOG_CRC = "RX_CRC {intf}: CRC errors; corrupted frames"
LOG_MTU = "MTU_DROP {intf}: Large packets dropped; MTU mismatch"
LOG_OSPF = "OSPF adjacency failure: area mismatch on {intf}"
LOG_NEIGHBOR_LOST = "NEIGHBOR_LOST {intf}: neighbor {peer} not responding"
LOG_HTTP_SURGE = "HTTP_SURGE :80: Surge in HTTP connections; request rate above capacity"


class VirtualClock:
    """Monotone virtual milliseconds; advances only through advance()."""

    def __init__(self, tick_ms: int = TICK_MS_DEFAULT):
        self.now = 0
        self.tick = tick_ms


@dataclass
class Flow:
    id: str
    src: str
    dst: str
    demand: float  # Mb/s
    proto: str = "tcp_bulk"  # tcp_bulk | udp | http
    port: int = 5001
    packet_size: int = 1500
    start: int = 0
    end: int = 1 << 62
    delivered: int = 0  # bytes
    dropped: int = 0  # bytes

    @property
    def elastic(self) -> bool:
        return self.proto == "tcp_bulk"


@dataclass
class InterfaceStats:
    tx_bytes: int = 0
    rx_bytes: int = 0
    tx_pkts: int = 0
    rx_pkts: int = 0
    drops_queue: int = 0
    drops_ttl: int = 0
    drops_acl: int = 0
    rx_errors: int = 0
    queue_len: int = 0
    queue_peak: int = 0

    def to_dict(self) -> dict:
        return {
            "tx_bytes": self.tx_bytes,
            "rx_bytes": self.rx_bytes,
            "tx_pkts": self.tx_pkts,
            "rx_pkts": self.rx_pkts,
            "drops_queue": self.drops_queue,
            "drops_ttl": self.drops_ttl,
            "drops_acl": self.drops_acl,
            "rx_errors": self.rx_errors,
            "queue_len": self.queue_len,
            "queue_peak": self.queue_peak,
        }


@dataclass
class EventLogEntry:
    t: int
    node: str
    severity: str
    text: str

    def to_dict(self) -> dict:
        return {"t": self.t, "node": self.node, "severity": self.severity, "text": self.text}


@dataclass
class ProbeResult:
    success: bool
    rtt_ms: float = 0.0
    fail_reason: str = ""
    fail_node: str = ""

    def to_dict(self) -> dict:
        if self.success:
            return {"success": True, "rtt_ms": round(self.rtt_ms, 3)}
        d = {"success": False, "fail_reason": self.fail_reason}
        if self.fail_node:
            d["fail_node"] = self.fail_node
        return d


@dataclass
class Snapshot:
    id: str
    t: int
    payload: dict


@dataclass
class FlowWindow:
    flow: str
    t0: int
    p95_ms: float
    offered: int
    delivered: int
    dropped: int
    samples: int

    def to_dict(self) -> dict:
        return {
            "flow": self.flow,
            "t0": self.t0,
            "p95_ms": self.p95_ms,
            "offered": self.offered,
            "delivered": self.delivered,
            "dropped": self.dropped,
            "samples": self.samples,
        }


def nearest_rank_p95(samples: list) -> float:
    """p95 by the nearest-rank method: ceil(0.95 * n)-th smallest."""
    if not samples:
        return 0.0
    ordered = sorted(samples)
    rank = -(-len(ordered) * 95 // 100)  # ceil without float
    return ordered[rank - 1]


class _WindowCollector:
    """Aggregates per-tick flow samples into closed 1-second windows."""

    def __init__(self, window_ms: int = 1000):
        self.window_ms = window_ms
        self.closed = []  # FlowWindow, in close order
        self._open = {}  # flow -> [t0, samples, offered, delivered, dropped]

    def record(self, flow_id, t, latency_ms, offered, delivered, dropped):
        w = self._open.get(flow_id)
        t0 = (t // self.window_ms) * self.window_ms
        if w is None:
            w = [t0, [], 0, 0, 0]
            self._open[flow_id] = w
        elif w[0] != t0:
            self._close(flow_id, w)
            w = [t0, [], 0, 0, 0]
            self._open[flow_id] = w
        if latency_ms is not None:
            w[1].append(latency_ms)
        w[2] += offered
        w[3] += delivered
        w[4] += dropped

    def _close(self, flow_id, w):
        self.closed.append(
            FlowWindow(
                flow=flow_id,
                t0=w[0],
                p95_ms=round(nearest_rank_p95(w[1]), 3),
                offered=w[2],
                delivered=w[3],
                dropped=w[4],
                samples=len(w[1]),
            )
        )

    def flush(self):
        for flow_id in sorted(self._open):
            self._close(flow_id, self._open[flow_id])
        self._open.clear()
        self.closed.sort(key=lambda w: (w.t0, w.flow))
        return self.closed


class _DirState:
    """Per link-direction egress queue; chunks keep per-flow attribution."""

    __slots__ = ("q", "chunks", "series", "_last")

    def __init__(self):
        self.q = 0
        self.chunks = []  # FIFO of [flow_id, bytes]
        self.series = []  # change-points: (t_ms, queue_bytes)
        self._last = 0

    def sample(self, t):
        if self.q != self._last:
            self.series.append((t, self.q))
            self._last = self.q


def max_min_rates(flows: list, capacity: dict) -> tuple:
    """Bounded max-min fair allocation (progressive filling).

    flows: list of (flow_id, demand_mbps, [direction keys]).
    capacity: direction key -> Mb/s.
    Returns (rates, binding): rates maps flow_id -> Mb/s; binding maps
    flow_id -> the direction that froze it, or None if it was frozen at
    its own demand.
    """
    rates, binding = {}, {}
    unfrozen = {fid: (dem, dirs) for fid, dem, dirs in flows}
    cap_left = dict(capacity)
    members = {}
    for fid, _, dirs in flows:
        for d in dirs:
            members.setdefault(d, set()).add(fid)
    while unfrozen:
        best_share, best_dir = None, None
        for d in sorted(members):
            n = len(members[d])
            if n == 0:
                continue
            share = max(cap_left[d], 0.0) / n
            if best_share is None or share < best_share - 1e-12:
                best_share, best_dir = share, d
        if best_dir is None:
            for fid in sorted(unfrozen):
                dem, _ = unfrozen[fid]
                rates[fid], binding[fid] = dem, None
            break
        low = [fid for fid in sorted(unfrozen) if unfrozen[fid][0] <= best_share + 1e-12]
        if low:
            to_freeze = [(fid, unfrozen[fid][0], None) for fid in low]
        else:
            to_freeze = [(fid, best_share, best_dir) for fid in sorted(members[best_dir])]
        for fid, rate, bind in to_freeze:
            _, dirs = unfrozen.pop(fid)
            rates[fid] = rate
            binding[fid] = bind
            for d in dirs:
                cap_left[d] -= rate
                members[d].discard(fid)
    return rates, binding


@dataclass
class _FlowPlan:
    flow: Flow
    status: str  # deliver | mtu_drop | denied | ttl | blocked
    dirs: list = field(default_factory=list)
    fail_node: str = ""
    fail_intf: str = ""
    send_rate: float = 0.0  # Mb/s actually injected
    through_rate: float = 0.0
    binding: tuple = None


class _PathResult:
    __slots__ = ("status", "hops", "dirs", "fail_reason", "fail_node", "delay_ms")

    def __init__(self):
        self.status = "ok"
        self.hops = []  # node ids visited after src
        self.dirs = []  # (node, intf) egress per hop
        self.fail_reason = ""
        self.fail_node = ""
        self.delay_ms = 0.0


class NetworkState:
    """Live simulator state; mutate only through one thread of control."""

    def __init__(self, topo: Topology, seed: int = None, tick_ms: int = TICK_MS_DEFAULT):
        self.topo = copy.deepcopy(topo)
        self.seed = topo.seed if seed is None else seed
        self.clock = VirtualClock(tick_ms)
        self.flows = {}
        self.logs = []
        self.stats = {}
        self.dirs = {}
        self._events = []  # heap of (t, seq, fn)
        self._event_seq = 0
        self._snap_seq = 0
        self.snapshot_sink = None  # callable(Snapshot) set by the orchestrator
        self.windows = _WindowCollector()
        self.probe_rng = random.Random(f"probe:{self.seed}")
        self.choice_rng = random.Random(f"inject:{self.seed}")
        self.flood_rps = {}  # host -> active inbound request rate
        self.version = 0  # bumped on any routing-relevant mutation
        self._routes = None
        self._routes_version = -1
        self._plan = None
        self._plan_key = None
        self._mtu_logged = set()
        self.last_ledger = {}
        for node in self.topo.nodes:
            for itf in node.interfaces:
                self.stats[(node.id, itf.id)] = InterfaceStats()
                self.dirs[(node.id, itf.id)] = _DirState()
        self._link_by_end = {}
        for link in self.topo.links:
            self._link_by_end[link.endpoint_a] = link
            self._link_by_end[link.endpoint_b] = link

    # -- mutation helpers (used by issue injection and workloads) -------------

    def mark_dirty(self):
        self.version += 1

    def log(self, node_id: str, severity: str, text: str):
        if self.topo.node(node_id).status == "crashed":
            return
        self.logs.append(EventLogEntry(t=self.clock.now, node=node_id, severity=severity, text=text))

    def schedule(self, t_ms: int, fn):
        heapq.heappush(self._events, (int(t_ms), self._event_seq, fn))
        self._event_seq += 1

    def find_link(self, node_id: str, intf_id: str):
        link = self._link_by_end.get((node_id, intf_id))
        if link is None:
            raise KeyError(f"no link at {node_id}/{intf_id}")
        return link

    def install_flow(self, flow: Flow):
        self.flows[flow.id] = flow
        self.mark_dirty()

    def remove_flow(self, flow_id: str):
        if self.flows.pop(flow_id, None) is not None:
            self.mark_dirty()

    def set_flood(self, host_id: str, rps: float):
        if rps > 0:
            self.flood_rps[host_id] = rps
        else:
            self.flood_rps.pop(host_id, None)

    # -- routing ---------------------------------------------------------------

    def _link_usable(self, link) -> bool:
        if link.state != "up":
            return False
        na, nb = self.topo.node(link.endpoint_a[0]), self.topo.node(link.endpoint_b[0])
        if na.status == "crashed" or nb.status == "crashed":
            return False
        ia = na.interface(link.endpoint_a[1])
        ib = nb.interface(link.endpoint_b[1])
        if ia.admin_state != "up" or ib.admin_state != "up":
            return False
        if na.kind == "router" and nb.kind == "router":
            area_a = na.config.ospf_area_by_interface.get(ia.id, 0)
            area_b = nb.config.ospf_area_by_interface.get(ib.id, 0)
            if area_a != area_b:
                return False
        return True

    def _adjacency(self) -> dict:
        adj = {n.id: [] for n in self.topo.nodes}
        for link in self.topo.links:
            if not self._link_usable(link):
                continue
            (a, ia), (b, ib) = link.endpoint_a, link.endpoint_b
            adj[a].append((b, ia, link))
            adj[b].append((a, ib, link))
        for lst in adj.values():
            lst.sort(key=lambda e: (e[0], e[1]))
        return adj

    def recompute_routes(self) -> dict:
        """Per-node subnet routing tables from the current adjacency graph.

        Shortest path by hop count toward each infrastructure subnet,
        next-hop ties broken by lexicographic node id then interface id.
        Hosts and controllers never carry transit traffic. Static routes
        and blackholes overlay these entries at resolution time.
        """
        adj = self._adjacency()
        transit_ok = {
            n.id: n.kind in ("switch", "router") and n.status != "crashed" for n in self.topo.nodes
        }
        subnets = {}  # network -> sorted owner node list
        for node in self.topo.nodes:
            if node.kind == "host":
                continue
            for itf in node.interfaces:
                net = ipaddress.ip_network(f"{itf.ip}/{itf.netmask}", strict=False)
                subnets.setdefault(net, set()).add(node.id)
        tables = {n.id: {} for n in self.topo.nodes}
        for net in sorted(subnets, key=lambda n: (n.network_address.packed, n.prefixlen)):
            owners = sorted(subnets[net])
            dist = {o: 0 for o in owners}
            frontier = list(owners)
            while frontier:
                nxt = []
                for x in sorted(frontier):
                    if dist[x] > 0 and not transit_ok[x]:
                        continue  # paths may end at x but not pass through it
                    for nbr, _, _ in adj[x]:
                        if nbr not in dist:
                            dist[nbr] = dist[x] + 1
                            nxt.append(nbr)
                frontier = nxt
            for node in self.topo.nodes:
                if node.id in owners:
                    continue
                d = dist.get(node.id)
                if d is None:
                    tables[node.id][net] = None
                    continue
                best = None
                for nbr, my_intf, _ in adj[node.id]:
                    nd = dist.get(nbr)
                    if nd is not None and nd == d - 1 and (nd == 0 or transit_ok[nbr]):
                        cand = (nbr, my_intf)
                        if best is None or cand < best:
                            best = cand
                tables[node.id][net] = best
        self._routes = {"tables": tables, "adj": adj, "derived_at": self.clock.now}
        self._routes_version = self.version
        return self._routes

    def routes(self) -> dict:
        if self._routes is None or self._routes_version != self.version:
            self.recompute_routes()
        return self._routes

    def node_primary_ip(self, node_id: str) -> str:
        node = self.topo.node(node_id)
        if not node.interfaces:
            raise ValueError(f"{node_id} has no interfaces")
        return node.interfaces[0].ip

    def _usable_neighbors(self, node_id: str) -> list:
        return self.routes()["adj"][node_id]

    def _static_entry(self, node, dst_ip):
        """Longest-prefix static route for dst_ip, or None."""
        best = None
        for prefix, nxt in node.config.static_routes:
            net = ipaddress.ip_network(prefix)
            if dst_ip in net:
                key = net.prefixlen
                if best is None or key > best[0]:
                    best = (key, nxt)
        return best

    def _resolve_router(self, node, dst_ip):
        """Resolution at a forwarding node: static > connected > computed,
        longest prefix first. Returns one of:
        ("forward", next_node, egress_intf) | ("self",) | ("blackhole",) |
        ("unreachable",)."""
        for itf in node.interfaces:
            if itf.ip == str(dst_ip):
                return ("self",)
        candidates = []  # (prefixlen, class_rank, payload); class: 2 static, 1 connected, 0 computed
        st = self._static_entry(node, dst_ip)
        if st is not None:
            candidates.append((st[0], 2, st[1]))
        for itf in node.interfaces:
            net = ipaddress.ip_network(f"{itf.ip}/{itf.netmask}", strict=False)
            if dst_ip in net:
                candidates.append((net.prefixlen, 1, itf.id))
        tables = self.routes()["tables"][node.id]
        for net, entry in tables.items():
            if dst_ip in net:
                candidates.append((net.prefixlen, 0, ("computed", entry)))
        if not candidates:
            return ("unreachable",)
        candidates.sort(key=lambda c: (c[0], c[1]), reverse=True)
        for _, rank, payload in candidates:
            if rank == 2:
                if payload == BLACKHOLE:
                    return ("blackhole",)
                nbr = payload
                for other, my_intf, _ in self._usable_neighbors(node.id):
                    if other == nbr:
                        return ("forward", nbr, my_intf)
                continue  # static next hop not adjacent/usable; fall through
            if rank == 1:
                # Connected subnet: ARP for the exact address among usable
                # neighbors. A miss is final for this destination.
                for other, my_intf, _ in self._usable_neighbors(node.id):
                    peer = self.topo.node(other)
                    for pitf in peer.interfaces:
                        if pitf.ip == str(dst_ip):
                            return ("forward", other, my_intf)
                return ("unreachable",)
            entry = payload[1]
            if entry is None:
                return ("unreachable",)
            return ("forward", entry[0], entry[1])
        return ("unreachable",)

    def _resolve_host(self, node, dst_ip):
        """First-hop decision of a host: on-link per its believed subnet,
        otherwise via its default route's gateway."""
        itf = node.interfaces[0]
        if itf.ip == str(dst_ip):
            return ("self",)
        believed = ipaddress.ip_network(f"{itf.ip}/{itf.netmask}", strict=False)
        neighbors = self._usable_neighbors(node.id)
        if dst_ip in believed:
            for other, my_intf, link in neighbors:
                peer = self.topo.node(other)
                for pitf in peer.interfaces:
                    if pitf.ip == str(dst_ip):
                        return ("forward", other, my_intf)
                # hosts behind the same gateway: one L2 hop away
                for other2, _, _ in self._usable_neighbors(other):
                    peer2 = self.topo.node(other2)
                    if peer2.kind != "host" or other2 == node.id:
                        continue
                    if peer2.interfaces and peer2.interfaces[0].ip == str(dst_ip):
                        return ("forward", other, my_intf)
            return ("unreachable",)
        st = self._static_entry(node, dst_ip) or self._static_entry_default(node)
        if st is None:
            return ("unreachable",)
        if st[1] == BLACKHOLE:
            return ("blackhole",)
        for other, my_intf, link in neighbors:
            if other != st[1]:
                continue
            gw = self.topo.node(other)
            gw_itf_id = link.other_end(node.id)[1]
            gw_ip = ipaddress.ip_address(gw.interface(gw_itf_id).ip)
            if gw_ip in believed:
                return ("forward", other, my_intf)
        return ("unreachable",)

    def _static_entry_default(self, node):
        for prefix, nxt in node.config.static_routes:
            if prefix == "0.0.0.0/0":
                return (0, nxt)
        return None

    def _acl_denies(self, node, proto, port) -> bool:
        for rule in node.config.acl_rules:
            if rule.proto != "any" and rule.proto != proto:
                continue
            if rule.ports and (port is None or port not in rule.ports):
                continue
            return rule.action == "deny"
        return False

    def walk_path(self, src: str, dst: str, proto: str = "icmp", port=None, size: int = 64) -> _PathResult:
        """Hop-by-hop forward walk from src toward dst under current state."""
        res = _PathResult()
        src_node = self.topo.node(src)
        dst_node = self.topo.node(dst)
        if src_node.status == "crashed":
            res.status, res.fail_reason, res.fail_node = "fail", "node_crashed", src
            return res
        if dst_node.status == "crashed":
            res.status, res.fail_reason, res.fail_node = "fail", "node_crashed", dst
            return res
        dst_ip = ipaddress.ip_address(self.node_primary_ip(dst))
        cur = src_node
        for hop_index in range(HOP_BUDGET):
            if cur.id == dst:
                return res
            if hop_index > 0 and cur.kind in ("host", "controller"):
                # hosts and controllers terminate traffic, never forward it
                res.status, res.fail_reason, res.fail_node = "fail", "unreachable", cur.id
                return res
            if cur.kind == "host":
                decision = self._resolve_host(cur, dst_ip)
            else:
                decision = self._resolve_router(cur, dst_ip)
            kind = decision[0]
            if kind == "self":
                return res
            if kind == "blackhole":
                res.status, res.fail_reason, res.fail_node = "fail", "blackholed", cur.id
                return res
            if kind == "unreachable":
                res.status, res.fail_reason, res.fail_node = "fail", "unreachable", cur.id
                return res
            nxt_id, egress = decision[1], decision[2]
            link = self.find_link(cur.id, egress)
            other_id, other_intf = link.other_end(cur.id)
            min_mtu = min(cur.interface(egress).mtu, self.topo.node(other_id).interface(other_intf).mtu)
            if size > min_mtu:
                res.status, res.fail_reason, res.fail_node = "fail", "mtu_exceeded", cur.id
                res.dirs.append((cur.id, egress))  # record the violating egress
                return res
            res.dirs.append((cur.id, egress))
            res.hops.append(nxt_id)
            res.delay_ms += link.propagation_delay
            nxt = self.topo.node(nxt_id)
            if self._acl_denies(nxt, proto, port):
                res.status, res.fail_reason, res.fail_node = "fail", "acl_denied", nxt_id
                return res
            cur = nxt
        res.status, res.fail_reason, res.fail_node = "fail", "ttl_exceeded", cur.id
        return res

    # -- probes ----------------------------------------------------------------

    def _queue_ms(self, dir_key) -> float:
        link = self.find_link(*dir_key)
        return self.dirs[dir_key].q * 0.008 / link.capacity

    def _path_rtt(self, walk: _PathResult) -> float:
        one_way = 0.0
        for dir_key in walk.dirs:
            link = self.find_link(*dir_key)
            one_way += link.propagation_delay + self._queue_ms(dir_key)
        return 2.0 * one_way

    def send_probe(self, kind: str, src: str, dst: str, size: int = 64, count: int = 1, port: int = None) -> list:
        """Walk count probes hop-by-hop; rtt reflects propagation plus
        current queuing delay. Per-hop corruption draws from the probe
        PRNG stream only on links with a nonzero error rate."""
        if kind not in ("icmp", "tcp_connect", "http"):
            raise ValueError(f"unknown probe kind {kind!r}")
        for name, val in (("src", src), ("dst", dst)):
            if val not in self.topo.node_map():
                raise ValueError(f"unknown {name} node {val!r}")
        proto = {"icmp": "icmp", "tcp_connect": "tcp", "http": "tcp"}[kind]
        if kind == "icmp":
            port = None
        elif kind == "http":
            port = 80
        results = []
        for _ in range(max(1, int(count))):
            walk = self.walk_path(src, dst, proto=proto, port=port, size=size)
            if walk.status != "ok":
                results.append(ProbeResult(False, fail_reason=walk.fail_reason, fail_node=walk.fail_node))
                continue
            corrupted = False
            for dir_key in walk.dirs:
                link = self.find_link(*dir_key)
                if link.error_rate > 0 and self.probe_rng.random() < link.error_rate:
                    corrupted = True
                    break
            if corrupted:
                results.append(ProbeResult(False, fail_reason="corrupted"))
                continue
            rtt = self._path_rtt(walk)
            if kind == "http":
                svc = self._service_of(dst)
                if svc is None:
                    results.append(ProbeResult(False, fail_reason="connection_refused", fail_node=dst))
                    continue
                load = self.flood_rps.get(dst, 0.0) / max(svc.capacity_rps, 1)
                if load >= 1.0:
                    results.append(ProbeResult(False, fail_reason="service_overloaded", fail_node=dst))
                    continue
                rtt += 5.0 / (1.0 - load)
            results.append(ProbeResult(True, rtt_ms=rtt))
        return results

    def _service_of(self, node_id):
        services = self.topo.node(node_id).config.services
        return services[0] if services else None

    def trace_path(self, src: str, dst: str) -> dict:
        """Ordered hop list up to the destination or the first failure."""
        for name, val in (("src", src), ("dst", dst)):
            if val not in self.topo.node_map():
                raise ValueError(f"unknown {name} node {val!r}")
        walk = self.walk_path(src, dst)
        hops = []
        cum = 0.0
        for i, hop in enumerate(walk.hops):
            link = self.find_link(*walk.dirs[i]) if i < len(walk.dirs) else None
            if link is not None:
                cum += link.propagation_delay + self._queue_ms(walk.dirs[i])
            hops.append({"node": hop, "rtt_ms": round(2 * cum, 3)})
        out = {"src": src, "dst": dst, "hops": hops, "complete": walk.status == "ok"}
        if walk.status != "ok":
            out["fail_reason"] = walk.fail_reason
            out["fail_node"] = walk.fail_node
        return out

    def reachability_matrix(self) -> dict:
        """Structural reachability between ordered host pairs (corruption
        ignored). Asymmetric whenever configuration is asymmetric."""
        hosts = sorted(n.id for n in self.topo.hosts())
        matrix = {}
        for a in hosts:
            row = {}
            for b in hosts:
                if a == b:
                    row[b] = True
                else:
                    row[b] = self.walk_path(a, b).status == "ok"
            matrix[a] = row
        return {"hosts": hosts, "matrix": matrix}

    # -- transport -------------------------------------------------------------

    def _active_flows(self) -> list:
        now = self.clock.now
        return [f for _, f in sorted(self.flows.items()) if f.start <= now < f.end and f.demand > 0]

    def _build_plan(self, active: list) -> list:
        plans = []
        routable = []
        for f in active:
            walk = self.walk_path(f.src, f.dst, proto={"tcp_bulk": "tcp", "udp": "udp", "http": "tcp"}[f.proto],
                                  port=f.port, size=f.packet_size)
            if walk.status == "ok":
                plans.append(_FlowPlan(flow=f, status="deliver", dirs=walk.dirs))
                routable.append(plans[-1])
            elif walk.fail_reason == "acl_denied":
                ingress = self._ingress_intf(walk)
                plans.append(_FlowPlan(flow=f, status="denied", fail_node=walk.fail_node, fail_intf=ingress))
            elif walk.fail_reason == "ttl_exceeded":
                ingress = self._ingress_intf(walk)
                plans.append(_FlowPlan(flow=f, status="ttl", fail_node=walk.fail_node, fail_intf=ingress))
            elif walk.fail_reason == "mtu_exceeded":
                plan = _FlowPlan(flow=f, status="mtu_drop", dirs=walk.dirs[:-1], fail_node=walk.fail_node)
                if walk.dirs:
                    key = walk.dirs[-1]
                    link = self.find_link(*key)
                    peer = link.other_end(key[0])
                    for node_id, intf_id in (key, peer):  # both ends notice the mismatch
                        if (node_id, intf_id) not in self._mtu_logged:
                            self._mtu_logged.add((node_id, intf_id))
                            self.log(node_id, "warning", LOG_MTU.format(intf=intf_id))
                if plan.dirs:
                    plan.status = "mtu_drop"
                    routable.append(plan)
                else:
                    plan.status = "blocked"  # cut at the very first hop
                plans.append(plan)
            else:
                plans.append(_FlowPlan(flow=f, status="blocked", fail_node=walk.fail_node))
        capacity = {k: self.find_link(*k).capacity for k in self.dirs}
        triples = [(p.flow.id, p.flow.demand, p.dirs) for p in routable]
        rates, binding = max_min_rates(triples, capacity)
        for p in routable:
            p.through_rate = rates[p.flow.id]
            p.send_rate = p.through_rate if p.flow.elastic else p.flow.demand
            b = binding[p.flow.id]
            p.binding = b if (b is not None and not p.flow.elastic) else None
        return plans

    def _ingress_intf(self, walk: _PathResult) -> str:
        if not walk.dirs:
            return ""
        last_node, last_intf = walk.dirs[-1]
        link = self.find_link(last_node, last_intf)
        return link.other_end(last_node)[1]

    def _plan_for_tick(self) -> list:
        active = self._active_flows()
        akey = (self.version, tuple((f.id, f.start, f.end, f.demand) for f in active))
        if self._plan_key != akey:
            self._plan = self._build_plan(active)
            self._plan_key = akey
        return self._plan

    def advance(self, dt_ms: int):
        """Run the fluid transport for dt virtual milliseconds (a multiple
        of the tick), firing scheduled events as their time is passed."""
        tick = self.clock.tick
        if dt_ms % tick != 0:
            raise ValueError(f"dt {dt_ms} not a multiple of tick {tick}")
        for _ in range(dt_ms // tick):
            self._tick(tick)

    def _fire_due_events(self):
        while self._events and self._events[0][0] <= self.clock.now:
            _, _, fn = heapq.heappop(self._events)
            fn()

    def _tick(self, tick_ms: int):
        plans = self._plan_for_tick()
        ledger = {}
        through = {k: 0 for k in self.dirs}
        excess = {}
        arrivals = {}
        for p in plans:
            f = p.flow
            sent = (int(f.demand * BYTES_PER_MBPS_MS) * tick_ms)
            if p.status == "denied":
                if p.fail_node and p.fail_intf:
                    self.stats[(p.fail_node, p.fail_intf)].drops_acl += sent
                f.dropped += sent
                self.windows.record(f.id, self.clock.now, None, sent, 0, sent)
                continue
            if p.status == "ttl":
                if p.fail_node and p.fail_intf:
                    self.stats[(p.fail_node, p.fail_intf)].drops_ttl += sent
                f.dropped += sent
                self.windows.record(f.id, self.clock.now, None, sent, 0, sent)
                continue
            if p.status == "blocked":
                f.dropped += sent
                self.windows.record(f.id, self.clock.now, None, sent, 0, sent)
                continue
            send_b = int(p.send_rate * BYTES_PER_MBPS_MS) * tick_ms
            through_b = int(p.through_rate * BYTES_PER_MBPS_MS) * tick_ms
            if through_b > send_b:
                through_b = send_b
            for k in p.dirs:
                through[k] += through_b
            if p.binding is not None and send_b > through_b:
                excess.setdefault(p.binding, []).append((f.id, send_b - through_b))
            arrivals[f.id] = (p, send_b, through_b)
        tick_drained = {}
        tick_overflow = {}
        for k in sorted(self.dirs):
            dstate = self.dirs[k]
            link = self.find_link(*k)
            cap_b = int(link.capacity * BYTES_PER_MBPS_MS) * tick_ms
            q_before = dstate.q
            # a link without carrier serves nothing; its queue freezes
            spare = cap_b - through[k] if self._link_usable(link) else 0
            drained = 0
            while dstate.chunks and spare > 0:
                chunk = dstate.chunks[0]
                take = min(chunk[1], spare)
                chunk[1] -= take
                spare -= take
                drained += take
                tick_drained.setdefault(chunk[0], 0)
                tick_drained[chunk[0]] += take
                if chunk[1] == 0:
                    dstate.chunks.pop(0)
            dstate.q -= drained
            exc_total = 0
            dropped = 0
            for fid, exc in excess.get(k, ()):  # deterministic: plan order
                exc_total += exc
                space = link.buffer - dstate.q
                take = min(space, exc)
                if take > 0:
                    dstate.chunks.append([fid, take])
                    dstate.q += take
                lost = exc - take
                if lost > 0:
                    dropped += lost
                    self.flows[fid].dropped += lost
                    tick_overflow[fid] = tick_overflow.get(fid, 0) + lost
            st = self.stats[k]
            st.drops_queue += dropped
            st.queue_len = dstate.q
            if dstate.q > st.queue_peak:
                st.queue_peak = dstate.q
            tx = through[k] + drained
            st.tx_bytes += tx
            st.tx_pkts += tx // 1500
            ledger[k] = {
                "offered": through[k] + exc_total,
                "delivered": tx,
                "dropped": dropped,
                "queued_delta": dstate.q - q_before,
            }
        # through-traffic delivery with per-hop CRC thinning
        for fid in sorted(arrivals):
            p, send_b, through_b = arrivals[fid]
            f = p.flow
            surviving = through_b
            for k in p.dirs:
                link = self.find_link(*k)
                peer_node, peer_intf = link.other_end(k[0])
                if link.error_rate > 0:
                    lost = int(surviving * link.error_rate)
                    if lost:
                        self.stats[(peer_node, peer_intf)].rx_errors += lost
                        f.dropped += lost
                        surviving -= lost
                st = self.stats[(peer_node, peer_intf)]
                st.rx_bytes += surviving
                st.rx_pkts += surviving // max(f.packet_size, 1)
            drained_for_f = tick_drained.get(fid, 0)
            if p.status == "deliver":
                f.delivered += surviving + drained_for_f
                delivered_now = surviving + drained_for_f
                dropped_now = (through_b - surviving) + tick_overflow.get(fid, 0)
            else:  # mtu_drop: everything that arrives at the cut is lost
                f.dropped += surviving + drained_for_f
                delivered_now = 0
                dropped_now = send_b
            latency = None
            if p.status == "deliver":
                latency = sum(
                    self.find_link(*k).propagation_delay + self._queue_ms(k) for k in p.dirs
                )
            self.windows.record(f.id, self.clock.now, latency, send_b, delivered_now, dropped_now)
        # drained bytes for flows with no arrivals this tick (e.g. just ended)
        for fid in sorted(tick_drained):
            if fid in arrivals:
                continue
            f = self.flows.get(fid)
            if f is not None:
                f.delivered += tick_drained[fid]
        self.last_ledger = ledger
        self.clock.now += tick_ms
        for k in sorted(self.dirs):
            self.dirs[k].sample(self.clock.now)
        self._fire_due_events()

    # -- snapshots / fingerprints ----------------------------------------------

    def snapshot(self) -> Snapshot:
        """Immutable copy of counters, queues, forwarding state, and the
        log cursor at the current instant."""
        self._snap_seq += 1
        snap_id = f"snap-{self._snap_seq:06d}"
        tables = self.routes()["tables"]
        payload = {
            "t": self.clock.now,
            "counters": {f"{n}/{i}": self.stats[(n, i)].to_dict() for (n, i) in sorted(self.stats)},
            "queues": {f"{n}/{i}": self.dirs[(n, i)].q for (n, i) in sorted(self.dirs)},
            "forwarding": {
                node: {str(net): (list(e) if e else UNREACHABLE) for net, e in sorted(tbl.items(), key=lambda kv: str(kv[0]))}
                for node, tbl in sorted(tables.items())
            },
            "log_cursor": len(self.logs),
            "flows": {
                fid: {"delivered": f.delivered, "dropped": f.dropped}
                for fid, f in sorted(self.flows.items())
            },
        }
        snap = Snapshot(id=snap_id, t=self.clock.now, payload=payload)
        if self.snapshot_sink is not None:
            self.snapshot_sink(snap)
        return snap

    def fingerprint(self) -> str:
        """Digest of every observable mutable quantity; used to prove that
        denied tool calls did not touch the simulator."""
        body = {
            "t": self.clock.now,
            "version": self.version,
            "counters": {f"{n}/{i}": self.stats[(n, i)].to_dict() for (n, i) in sorted(self.stats)},
            "queues": {f"{n}/{i}": self.dirs[(n, i)].q for (n, i) in sorted(self.dirs)},
            "logs": len(self.logs),
            "flows": {fid: (f.delivered, f.dropped) for fid, f in sorted(self.flows.items())},
            "rng": repr(self.probe_rng.getstate()),
            "snap_seq": self._snap_seq,
        }
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()

    # -- views used by diagnostic tools -----------------------------------------

    def routing_table_view(self, node_id: str) -> list:
        node = self.topo.node(node_id)
        rows = []
        for prefix, nxt in node.config.static_routes:
            rows.append({"prefix": prefix, "next_hop": nxt, "source": "static"})
        for itf in node.interfaces:
            net = ipaddress.ip_network(f"{itf.ip}/{itf.netmask}", strict=False)
            rows.append({"prefix": str(net), "next_hop": itf.id, "source": "connected"})
        if node.kind != "host":
            for net, entry in sorted(self.routes()["tables"][node_id].items(), key=lambda kv: str(kv[0])):
                if entry is None:
                    rows.append({"prefix": str(net), "next_hop": UNREACHABLE, "source": "computed"})
                else:
                    rows.append({"prefix": str(net), "next_hop": entry[0], "interface": entry[1], "source": "computed"})
        return rows

    def config_view(self, node_id: str) -> dict:
        node = self.topo.node(node_id)
        return {
            "node": node.id,
            "kind": node.kind,
            "interfaces": [
                {
                    "id": i.id,
                    "ip": i.ip,
                    "netmask": i.netmask,
                    "mtu": i.mtu,
                    "admin_state": i.admin_state,
                    "ospf_area": node.config.ospf_area_by_interface.get(i.id, 0),
                }
                for i in node.interfaces
            ],
            "acl_rules": [
                {"action": r.action, "proto": r.proto, "ports": list(r.ports)} for r in node.config.acl_rules
            ],
            "static_routes": [list(sr) for sr in node.config.static_routes],
            "services": [{"port": s.port, "capacity_rps": s.capacity_rps} for s in node.config.services],
        }

    def queue_series(self, node_id: str, intf_id: str, since_ms: int = 0) -> list:
        d = self.dirs.get((node_id, intf_id))
        if d is None:
            raise KeyError(f"unknown interface {node_id}/{intf_id}")
        return [(t, q) for t, q in d.series if t >= since_ms]
