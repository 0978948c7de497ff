"""Incident model: the (scenario, issues, workload) tuple, the root-cause
catalog with injection semantics, parametric templates, and traffic
generators.

Every root cause in the catalog maps to exactly one injection function
and one canonical log template (or a deliberate absence of logs for
silent misconfigurations), so each incident produces a deterministic,
greppable signal set.
"""

from __future__ import annotations

import fnmatch

import json
import random
from dataclasses import dataclass, field

from . import simcore
from .simcore import Flow, NetworkState
from .topology import AclRule, BLACKHOLE, Topology, build_scenario, entity_universe

ROOT_CAUSES = (
    "link_down",
    "link_detached",
    "link_flap",
    "faulty_cable",
    "mtu_fragmentation_disabled",
    "host_crash",
    "switch_crash",
    "host_ip_misconfig",
    "incorrect_netmask",
    "ospf_area_mismatch",
    "static_blackhole",
    "fwd_entry_misconfig",
    "forwarding_loop",
    "icmp_acl_block",
    "http_acl_block",
    "incast_traffic",
    "microburst",
    "dos_flood",
)

GOALS = ("detect", "localize", "rca")

DEFAULT_WARMUP_MS = 5000
DEFAULT_HORIZON_MS = 600000

# Aggregate triggering rate for queue-building causes, as a multiple of
# the victim link capacity.
BURST_OVERSUBSCRIPTION = 3.2


class SpecError(ValueError):
    """Invalid incident document; collects every violation found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass
class Issue:
    dev: str
    comp: str
    root_cause: str
    params: dict = field(default_factory=dict)
    inject_at: int = 0  # virtual ms after warmup


@dataclass
class TriggerSpec:
    kind: str  # incast_od | burst | request_flood
    src: str  # glob over host ids, or "all"
    dst: str
    interval_s: float = 20.0
    rate: float = 0.0  # Mb/s (traffic kinds) or rps (request_flood)
    burst_len_ms: int = 1000


@dataclass
class Workload:
    pattern: str = "uniform_all_pairs"
    rho: float = 0.0
    triggering: list = field(default_factory=list)  # TriggerSpec


@dataclass
class IncidentSpec:
    name: str
    scenario: str
    size: str
    seed: int
    issues: list = field(default_factory=list)
    workload: Workload = field(default_factory=Workload)
    goals: tuple = GOALS
    warmup: int = DEFAULT_WARMUP_MS
    horizon: int = DEFAULT_HORIZON_MS

    def build_topology(self) -> Topology:
        return build_scenario(self.scenario, self.size, self.seed)


@dataclass
class GroundTruth:
    detected_expected: bool
    entities: list  # sorted (dev, comp) positives
    cause_set: tuple
    injection_times: list  # absolute virtual ms per issue

    def entity_mask(self, universe: list) -> list:
        positive = set(map(tuple, self.entities))
        return [tuple(e) in positive for e in universe]

    def to_dict(self) -> dict:
        return {
            "detected_expected": self.detected_expected,
            "entities": [list(e) for e in self.entities],
            "cause_set": sorted(self.cause_set),
            "injection_times": list(self.injection_times),
        }


def derive_ground_truth(spec: IncidentSpec, topo: Topology) -> GroundTruth:
    """Pure derivation; never exposed through the tool gateway.

    Two causes mark more than one entity: a forwarding loop implicates
    both pinned devices, and a shrunken link MTU implicates both endpoint
    interfaces (drops occur on whichever side sends the oversized bytes).
    """
    entities = set()
    for issue in spec.issues:
        entities.add((issue.dev, issue.comp))
        if issue.root_cause == "forwarding_loop":
            entities.add((issue.params["peer"], "routing"))
        elif issue.root_cause == "mtu_fragmentation_disabled":
            link = _link_of(topo, issue.dev, issue.comp)
            peer = link.other_end(issue.dev)
            entities.add((peer[0], peer[1]))
    return GroundTruth(
        detected_expected=bool(spec.issues),
        entities=sorted(entities),
        cause_set=tuple(sorted({i.root_cause for i in spec.issues})),
        injection_times=[spec.warmup + i.inject_at for i in spec.issues],
    )


# --- parameter schemas --------------------------------------------------------

def _num(lo=None, hi=None):
    def check(v):
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            return "must be a number"
        if lo is not None and v < lo:
            return f"must be >= {lo}"
        if hi is not None and v > hi:
            return f"must be <= {hi}"
        return None
    return check


def _string(v):
    return None if isinstance(v, str) else "must be a string"


PARAM_SCHEMAS = {
    "link_down": {},
    "link_detached": {},
    "link_flap": {"up_ms": _num(lo=10), "down_ms": _num(lo=10)},
    "faulty_cable": {"error_rate": _num(lo=0.0, hi=1.0)},
    "mtu_fragmentation_disabled": {"mtu": _num(lo=576, hi=9216)},
    "host_crash": {},
    "switch_crash": {},
    "host_ip_misconfig": {"ip": _string},
    "incorrect_netmask": {"prefix": _num(lo=1, hi=23)},
    "ospf_area_mismatch": {"interface": _string, "area": _num(lo=1)},
    "static_blackhole": {"victim": _string},
    "fwd_entry_misconfig": {"victim": _string},
    "forwarding_loop": {"victim": _string, "peer": _string},
    "icmp_acl_block": {},
    "http_acl_block": {},
    "incast_traffic": {"rate_mbps": _num(lo=0.1), "interval_s": _num(lo=0.1), "burst_len_ms": _num(lo=10), "src": _string},
    "microburst": {"rate_mbps": _num(lo=0.1), "interval_s": _num(lo=0.1), "burst_len_ms": _num(lo=10), "src": _string},
    "dos_flood": {"rate_rps": _num(lo=1)},
}

_REQUIRED_PARAMS = {
    "ospf_area_mismatch": ("interface",),
    "static_blackhole": ("victim",),
    "fwd_entry_misconfig": ("victim",),
    "forwarding_loop": ("victim", "peer"),
}


# --- target compatibility ------------------------------------------------------

_LINK_CAUSES = ("link_down", "link_detached", "link_flap", "faulty_cable", "mtu_fragmentation_disabled")
_BURST_CAUSES = ("incast_traffic", "microburst")


def _node_or_none(topo, dev):
    try:
        return topo.node(dev)
    except KeyError:
        return None


def _has_link(topo, dev, intf):
    return any((dev, intf) in (l.endpoint_a, l.endpoint_b) for l in topo.links)


def _attached_hosts(topo, dev):
    out = []
    for link in topo.links_of(dev):
        other = link.other_end(dev)[0]
        if topo.node(other).kind == "host":
            out.append(other)
    return sorted(out)


def _router_neighbors(topo, dev):
    node = topo.node(dev)
    out = []
    if node.kind != "router":
        return out
    for link in topo.links_of(dev):
        other, _ = link.other_end(dev)
        if topo.node(other).kind == "router":
            my_intf = link.endpoint_a[1] if link.endpoint_a[0] == dev else link.endpoint_b[1]
            out.append((my_intf, other))
    return sorted(out)


def validate_issue_target(issue: Issue, topo: Topology) -> list:
    """Cause-specific compatibility checks between (dev, comp, params)
    and the scenario. Returns error strings (empty when compatible)."""
    errors = []
    cause = issue.root_cause
    node = _node_or_none(topo, issue.dev)
    if node is None:
        return [f"issue on nonexistent node {issue.dev!r}"]
    if cause in _LINK_CAUSES:
        if node.kind not in ("switch", "router"):
            errors.append(f"{cause} requires a switch/router device, {issue.dev} is a {node.kind}")
        elif not _has_link(topo, issue.dev, issue.comp):
            errors.append(f"{cause}: no link at {issue.dev}/{issue.comp}")
    elif cause == "host_crash":
        if node.kind != "host":
            errors.append(f"host_crash requires a host, {issue.dev} is a {node.kind}")
        if issue.comp != "system":
            errors.append("host_crash component must be 'system'")
    elif cause == "switch_crash":
        if node.kind not in ("switch", "router"):
            errors.append(f"switch_crash requires a switch/router, {issue.dev} is a {node.kind}")
        if issue.comp != "system":
            errors.append("switch_crash component must be 'system'")
    elif cause in ("host_ip_misconfig", "incorrect_netmask"):
        if node.kind != "host":
            errors.append(f"{cause} requires a host, {issue.dev} is a {node.kind}")
        elif not node.interfaces or issue.comp != node.interfaces[0].id:
            errors.append(f"{cause} component must be the host data interface")
    elif cause == "ospf_area_mismatch":
        if issue.comp != "routing":
            errors.append("ospf_area_mismatch component must be 'routing'")
        intf = issue.params.get("interface")
        if intf is not None and intf not in [i for i, _ in _router_neighbors(topo, issue.dev)]:
            errors.append(f"ospf_area_mismatch: {issue.dev}/{intf} is not a router-to-router interface")
    elif cause in ("static_blackhole", "fwd_entry_misconfig", "forwarding_loop"):
        if issue.comp != "routing":
            errors.append(f"{cause} component must be 'routing'")
        if node.kind not in ("switch", "router"):
            errors.append(f"{cause} requires a switch/router, {issue.dev} is a {node.kind}")
        victim = issue.params.get("victim")
        if victim is not None:
            vnode = _node_or_none(topo, victim)
            if vnode is None or vnode.kind != "host":
                errors.append(f"{cause}: victim {victim!r} is not a host")
        if cause == "fwd_entry_misconfig" and not _attached_hosts(topo, issue.dev):
            errors.append("fwd_entry_misconfig requires a device with attached hosts")
        if cause == "forwarding_loop":
            peer = issue.params.get("peer")
            if peer is not None:
                adjacent = {l.other_end(issue.dev)[0] for l in topo.links_of(issue.dev)}
                pnode = _node_or_none(topo, peer)
                if pnode is None or pnode.kind not in ("switch", "router") or peer not in adjacent:
                    errors.append(f"forwarding_loop: peer {peer!r} must be an adjacent switch/router")
    elif cause in ("icmp_acl_block", "http_acl_block"):
        if issue.comp != "acl":
            errors.append(f"{cause} component must be 'acl'")
        if node.kind not in ("switch", "router"):
            errors.append(f"{cause} requires a switch/router, {issue.dev} is a {node.kind}")
    elif cause in _BURST_CAUSES:
        if node.kind not in ("switch", "router"):
            errors.append(f"{cause} requires the victim egress switch, {issue.dev} is a {node.kind}")
        elif not _has_link(topo, issue.dev, issue.comp):
            errors.append(f"{cause}: no link at {issue.dev}/{issue.comp}")
        else:
            other = topo.node(_link_of(topo, issue.dev, issue.comp).other_end(issue.dev)[0])
            if other.kind != "host":
                errors.append(f"{cause}: {issue.dev}/{issue.comp} does not face a host")
    elif cause == "dos_flood":
        if node.kind != "host" or issue.comp != "service":
            errors.append("dos_flood targets a host 'service' component")
    return errors


def _link_of(topo, dev, intf):
    for link in topo.links:
        if (dev, intf) in (link.endpoint_a, link.endpoint_b):
            return link
    raise KeyError(f"no link at {dev}/{intf}")


# --- spec loading ---------------------------------------------------------------

def load_spec(doc: dict) -> IncidentSpec:
    """Validate an incident document; raises SpecError listing every
    violation found, not just the first."""
    errors = []
    name = doc.get("name")
    if not isinstance(name, str) or not name:
        errors.append("missing incident name")
        name = "<unnamed>"
    scen = doc.get("scenario", {})
    kind, size = scen.get("kind"), scen.get("size")
    topo = None
    try:
        topo = build_scenario(kind, size, int(doc.get("seed", 0)))
    except (ValueError, TypeError) as exc:
        errors.append(str(exc))
    goals = tuple(doc.get("goals") or GOALS)
    for g in goals:
        if g not in GOALS:
            errors.append(f"unknown goal {g!r}")
    issues = []
    universe = set(map(tuple, entity_universe(topo))) if topo else set()
    for i, idoc in enumerate(doc.get("issues", [])):
        cause = idoc.get("root_cause")
        if cause not in ROOT_CAUSES:
            errors.append(f"issues[{i}]: out-of-scope root cause {cause!r}")
            continue
        issue = Issue(
            dev=idoc.get("dev", ""),
            comp=idoc.get("comp", ""),
            root_cause=cause,
            params=dict(idoc.get("params", {})),
            inject_at=int(idoc.get("inject_at_ms", 0)),
        )
        schema = PARAM_SCHEMAS[cause]
        for pname, value in issue.params.items():
            if pname not in schema:
                errors.append(f"issues[{i}]: unknown param {pname!r} for {cause}")
            else:
                problem = schema[pname](value)
                if problem:
                    errors.append(f"issues[{i}]: param {pname} {problem}")
        for req in _REQUIRED_PARAMS.get(cause, ()):
            if req not in issue.params:
                errors.append(f"issues[{i}]: {cause} requires param {req!r}")
        if topo is not None:
            if (issue.dev, issue.comp) not in universe:
                errors.append(f"issues[{i}]: ({issue.dev}, {issue.comp}) not in the scenario's entity universe")
            else:
                errors.extend(f"issues[{i}]: {e}" for e in validate_issue_target(issue, topo))
        issues.append(issue)
    targets = [(i.dev, i.comp) for i in issues]
    if len(set(targets)) != len(targets):
        errors.append("composite issues must target distinct (dev, comp) entities")
    wdoc = doc.get("workload") or {}
    workload = _load_workload(wdoc, errors)
    if topo is not None and workload.rho > 0:
        errors.extend(_validate_rho(workload.rho, topo))
    if topo is not None:
        for t, trig in enumerate(workload.triggering):
            if _node_or_none(topo, trig.dst) is None:
                errors.append(f"workload.triggering[{t}]: unknown dst node {trig.dst!r}")
    if errors:
        raise SpecError(errors)
    return IncidentSpec(
        name=name,
        scenario=kind,
        size=size,
        seed=int(doc.get("seed", 0)),
        issues=issues,
        workload=workload,
        goals=goals,
        warmup=int(doc.get("warmup_ms", DEFAULT_WARMUP_MS)),
        horizon=int(doc.get("horizon_ms", DEFAULT_HORIZON_MS)),
    )


def _load_workload(wdoc: dict, errors: list) -> Workload:
    reg = wdoc.get("regular") or {}
    pattern = reg.get("pattern", "uniform_all_pairs")
    if pattern != "uniform_all_pairs":
        errors.append(f"unknown workload pattern {pattern!r}")
    rho = reg.get("rho", 0.0)
    if not isinstance(rho, (int, float)) or not (0.0 <= rho <= 1.0):
        errors.append(f"workload rho must be in [0, 1], got {rho!r}")
        rho = 0.0
    raw_trig = wdoc.get("triggering")
    if raw_trig is None:
        raw_trig = []
    elif isinstance(raw_trig, dict):
        raw_trig = [raw_trig]
    triggering = []
    for t, tdoc in enumerate(raw_trig):
        kind = tdoc.get("kind")
        if kind not in ("incast_od", "burst", "request_flood"):
            errors.append(f"workload.triggering[{t}]: unknown kind {kind!r}")
            continue
        triggering.append(
            TriggerSpec(
                kind=kind,
                src=tdoc.get("src", "all"),
                dst=tdoc.get("dst", ""),
                interval_s=float(tdoc.get("interval_s", 20.0)),
                rate=float(tdoc.get("rate", 0.0)),
                burst_len_ms=int(tdoc.get("burst_len_ms", 1000)),
            )
        )
    return Workload(pattern=pattern, rho=float(rho), triggering=triggering)


def _validate_rho(rho: float, topo: Topology) -> list:
    """The regular load, routed over the healthy network, must not exceed
    any link's capacity."""
    state = NetworkState(topo)
    hosts = sorted(n.id for n in topo.hosts())
    n = len(hosts)
    if n < 2:
        return []
    bottleneck = min(l.capacity for l in topo.links)
    per_flow = rho * bottleneck / (n * (n - 1))
    load = {}
    for a in hosts:
        for b in hosts:
            if a == b:
                continue
            walk = state.walk_path(a, b, proto="tcp", port=5001, size=1500)
            if walk.status != "ok":
                return [f"healthy scenario cannot route {a}->{b} ({walk.fail_reason})"]
            for key in walk.dirs:
                load[key] = load.get(key, 0.0) + per_flow
    errors = []
    for key, offered in sorted(load.items()):
        cap = state.find_link(*key).capacity
        if offered > cap + 1e-9:
            errors.append(f"regular load {offered:.1f} Mb/s exceeds capacity {cap} Mb/s on {key[0]}/{key[1]}")
    return errors


def spec_to_dict(spec: IncidentSpec) -> dict:
    trig = [
        {
            "kind": t.kind,
            "src": t.src,
            "dst": t.dst,
            "interval_s": t.interval_s,
            "rate": t.rate,
            "burst_len_ms": t.burst_len_ms,
        }
        for t in spec.workload.triggering
    ]
    return {
        "name": spec.name,
        "scenario": {"kind": spec.scenario, "size": spec.size},
        "seed": spec.seed,
        "warmup_ms": spec.warmup,
        "horizon_ms": spec.horizon,
        "goals": list(spec.goals),
        "issues": [
            {
                "dev": i.dev,
                "comp": i.comp,
                "root_cause": i.root_cause,
                "params": dict(i.params),
                "inject_at_ms": i.inject_at,
            }
            for i in spec.issues
        ],
        "workload": {
            "regular": {"pattern": spec.workload.pattern, "rho": spec.workload.rho},
            "triggering": trig if trig else None,
        },
    }


# --- templates -------------------------------------------------------------------

def _healthy_coverage(topo: Topology) -> tuple:
    """(nodes, egress directions) traversed by healthy host-pair paths."""
    state = NetworkState(topo)
    hosts = sorted(n.id for n in topo.hosts())
    nodes, dirs = set(), set()
    for a in hosts:
        for b in hosts:
            if a == b:
                continue
            walk = state.walk_path(a, b)
            if walk.status == "ok":
                nodes.update(walk.hops)
                dirs.update(walk.dirs)
    return nodes, dirs


def eligible_entities(cause: str, topo: Topology) -> list:
    """All (dev, comp, params) bindings a cause may legally target in a
    scenario, in deterministic order. Causes whose only signal is carried
    by traffic (CRC errors, MTU drops, ACL counters) are restricted to
    entities on healthy traffic paths."""
    out = []
    hosts = sorted(n.id for n in topo.hosts())
    fabric = sorted(n.id for n in topo.nodes if n.kind in ("switch", "router"))
    if cause in _LINK_CAUSES:
        needs_traffic = cause in ("faulty_cable", "mtu_fragmentation_disabled")
        crossed = _healthy_coverage(topo)[1] if needs_traffic else None
        for link in topo.links:
            for dev, intf in sorted((link.endpoint_a, link.endpoint_b)):
                if topo.node(dev).kind not in ("switch", "router"):
                    continue
                if crossed is not None and (dev, intf) not in crossed:
                    continue
                out.append((dev, intf, {}))
    elif cause == "host_crash":
        out = [(h, "system", {}) for h in hosts]
    elif cause == "switch_crash":
        out = [(s, "system", {}) for s in fabric]
    elif cause in ("host_ip_misconfig", "incorrect_netmask"):
        out = [(h, topo.node(h).interfaces[0].id, {}) for h in hosts]
    elif cause == "ospf_area_mismatch":
        for dev in fabric:
            for intf, _ in _router_neighbors(topo, dev):
                out.append((dev, "routing", {"interface": intf}))
    elif cause == "static_blackhole":
        # Pin the blackhole on the victim's gateway so every remote path
        # to the victim crosses it.
        for dev in fabric:
            for victim in _attached_hosts(topo, dev):
                out.append((dev, "routing", {"victim": victim}))
    elif cause == "fwd_entry_misconfig":
        for dev in fabric:
            attached = _attached_hosts(topo, dev)
            if not attached:
                continue
            for victim in hosts:
                if victim not in attached:
                    out.append((dev, "routing", {"victim": victim}))
    elif cause == "forwarding_loop":
        for dev in fabric:
            if not _attached_hosts(topo, dev):
                continue
            peers = sorted(
                l.other_end(dev)[0]
                for l in topo.links_of(dev)
                if topo.node(l.other_end(dev)[0]).kind in ("switch", "router")
            )
            near = set(_attached_hosts(topo, dev))
            for peer in peers:
                near |= set(_attached_hosts(topo, peer))
                for victim in hosts:
                    if victim not in near:
                        out.append((dev, "routing", {"victim": victim, "peer": peer}))
                        break  # one victim per (dev, peer) keeps the set compact
    elif cause in ("icmp_acl_block", "http_acl_block"):
        crossed_nodes = _healthy_coverage(topo)[0]
        out = [(dev, "acl", {}) for dev in fabric if dev in crossed_nodes]
    elif cause in _BURST_CAUSES:
        for dev in fabric:
            for link in topo.links_of(dev):
                other, _ = link.other_end(dev)
                if topo.node(other).kind == "host":
                    intf = link.endpoint_a[1] if link.endpoint_a[0] == dev else link.endpoint_b[1]
                    out.append((dev, intf, {}))
    elif cause == "dos_flood":
        out = [(h, "service", {}) for h in hosts if topo.node(h).config.services]
    else:
        raise ValueError(f"unknown root cause {cause!r}")
    return out


def expand_template(doc: dict, bindings: list = None, seed: int = None) -> IncidentSpec:
    """Fill a template's "$n" slots, either from positional bindings or by
    a seeded uniform draw over the eligible entities of each issue's cause."""
    doc = json.loads(json.dumps(doc))  # deep copy
    if bindings is not None:
        def fill(value):
            if isinstance(value, str) and value.startswith("$"):
                idx = int(value[1:]) - 1
                if idx >= len(bindings):
                    raise SpecError([f"template slot {value} has no binding"])
                return bindings[idx]
            if isinstance(value, dict):
                return {k: fill(v) for k, v in value.items()}
            if isinstance(value, list):
                return [fill(v) for v in value]
            return value
        doc = fill(doc)
    else:
        if seed is None:
            raise SpecError(["template expansion needs bindings or a seed"])
        scen = doc.get("scenario", {})
        topo = build_scenario(scen.get("kind"), scen.get("size"), int(doc.get("seed", 0)))
        rng = random.Random(f"template:{seed}")
        for idoc in doc.get("issues", []):
            cause = idoc.get("root_cause")
            if cause not in ROOT_CAUSES:
                raise SpecError([f"out-of-scope root cause {cause!r}"])
            slots = [v for v in (idoc.get("dev"), idoc.get("comp")) if isinstance(v, str) and v.startswith("$")]
            if not slots:
                continue
            pool = eligible_entities(cause, topo)
            if not pool:
                raise SpecError([f"no eligible entity for {cause} in this scenario"])
            dev, comp, params = pool[rng.randrange(len(pool))]
            idoc["dev"], idoc["comp"] = dev, comp
            merged = dict(params)
            merged.update({k: v for k, v in (idoc.get("params") or {}).items() if not (isinstance(v, str) and v.startswith("$"))})
            idoc["params"] = merged
        doc["name"] = f"{doc.get('name', 'incident')}:{seed}"
    return load_spec(doc)


def compose(specs: list) -> IncidentSpec:
    """Union of issues from same-scenario specs; triggering workloads
    concatenate, the first spec's scalars win."""
    if not specs:
        raise SpecError(["compose needs at least one spec"])
    if len(specs) == 1:
        return specs[0]
    first = specs[0]
    for s in specs[1:]:
        if (s.scenario, s.size) != (first.scenario, first.size):
            raise SpecError(["composed specs must share one scenario"])
    issues, targets = [], set()
    for s in specs:
        for i in s.issues:
            if (i.dev, i.comp) in targets:
                raise SpecError([f"composite issues must target distinct entities; ({i.dev}, {i.comp}) repeats"])
            targets.add((i.dev, i.comp))
            issues.append(i)
    trig = [t for s in specs for t in s.workload.triggering]
    return IncidentSpec(
        name="+".join(s.name for s in specs),
        scenario=first.scenario,
        size=first.size,
        seed=first.seed,
        issues=issues,
        workload=Workload(pattern=first.workload.pattern, rho=first.workload.rho, triggering=trig),
        goals=tuple(sorted(set(g for s in specs for g in s.goals), key=GOALS.index)),
        warmup=first.warmup,
        horizon=max(s.horizon for s in specs),
    )


# --- traffic -----------------------------------------------------------------------

def bottleneck_capacity(topo: Topology) -> float:
    return min(l.capacity for l in topo.links)


def drive_workload(workload: Workload, state: NetworkState, arm_at_ms: int = 0):
    """Install the regular traffic matrix now and schedule triggering
    traffic to arm at arm_at_ms."""
    hosts = sorted(n.id for n in state.topo.hosts())
    n = len(hosts)
    if workload.rho > 0 and n > 1:
        aggregate = workload.rho * bottleneck_capacity(state.topo)
        per_flow = aggregate / (n * (n - 1))
        for a in hosts:
            for b in hosts:
                if a != b:
                    state.install_flow(Flow(id=f"bg:{a}>{b}", src=a, dst=b, demand=per_flow,
                                            proto="tcp_bulk", port=5001))
    for idx, trig in enumerate(workload.triggering):
        _arm_trigger(state, trig, arm_at_ms, tag=f"t{idx}")


def _match_hosts(state: NetworkState, pattern: str, exclude: str) -> list:
    hosts = sorted(n.id for n in state.topo.hosts() if n.id != exclude)
    if pattern in ("all", "*", ""):
        return hosts
    return [h for h in hosts if fnmatch.fnmatchcase(h, pattern)]


def _arm_trigger(state: NetworkState, trig: TriggerSpec, arm_at_ms: int, tag: str):
    if trig.kind == "request_flood":
        def flood():
            state.set_flood(trig.dst, trig.rate)
            state.log(trig.dst, "warning", simcore.LOG_HTTP_SURGE)
            srcs = _match_hosts(state, trig.src, trig.dst)
            per = (trig.rate * 1500 * 8 / 1e6) / max(len(srcs), 1)  # request bytes
            for s in srcs:
                state.install_flow(Flow(id=f"{tag}:flood:{s}", src=s, dst=trig.dst, demand=per,
                                        proto="http", port=80, start=state.clock.now))
        state.schedule(arm_at_ms, flood)
        return

    counter = {"n": 0}

    def fire():
        srcs = _match_hosts(state, trig.src, trig.dst)
        now = state.clock.now
        per = trig.rate / max(len(srcs), 1)
        for s in srcs:
            state.install_flow(
                Flow(
                    id=f"{tag}:{trig.kind}{counter['n']}:{s}",
                    src=s,
                    dst=trig.dst,
                    demand=per,
                    proto="udp",
                    port=None,
                    start=now,
                    end=now + trig.burst_len_ms,
                )
            )
        counter["n"] += 1
        state.schedule(now + int(trig.interval_s * 1000), fire)

    state.schedule(arm_at_ms, fire)


# --- injection ----------------------------------------------------------------------

def schedule_injections(spec: IncidentSpec, state: NetworkState):
    """Register every issue to fire at warmup + inject_at, plus any
    issue-derived triggering traffic."""
    for issue in spec.issues:
        at = spec.warmup + issue.inject_at
        state.schedule(at, lambda issue=issue: inject(issue, state))


def inject(issue: Issue, state: NetworkState):
    """Apply one issue's mutation to the live state, with its canonical
    log signal. Traffic-only causes arm their triggering workload instead
    of mutating configuration."""
    _INJECTORS[issue.root_cause](issue, state)
    state.mark_dirty()


def _inject_link_down(issue, state):
    link = state.find_link(issue.dev, issue.comp)
    link.state = "down"
    state.log(issue.dev, "error", simcore.LOG_LINK_DOWN.format(intf=issue.comp))


def _inject_link_detached(issue, state):
    link = state.find_link(issue.dev, issue.comp)
    link.state = "detached"
    state.log(issue.dev, "error", simcore.LOG_LINK_DETACHED.format(intf=issue.comp))


def _inject_link_flap(issue, state):
    link = state.find_link(issue.dev, issue.comp)
    up_ms = int(issue.params.get("up_ms", 4000))
    down_ms = int(issue.params.get("down_ms", 1000))

    def go_down():
        link.state = "down"
        state.log(issue.dev, "error", simcore.LOG_LINK_FLAP_DOWN.format(intf=issue.comp))
        state.mark_dirty()
        state.schedule(state.clock.now + down_ms, go_up)

    def go_up():
        link.state = "up"
        state.log(issue.dev, "warning", simcore.LOG_LINK_FLAP_UP.format(intf=issue.comp))
        state.mark_dirty()
        state.schedule(state.clock.now + up_ms, go_down)

    go_down()


def _inject_faulty_cable(issue, state):
    link = state.find_link(issue.dev, issue.comp)
    link.error_rate = float(issue.params.get("error_rate", 0.05))
    state.log(issue.dev, "warning", simcore.LOG_CRC.format(intf=issue.comp))


def _inject_mtu(issue, state):
    link = state.find_link(issue.dev, issue.comp)
    mtu = int(issue.params.get("mtu", 576))
    for node_id, intf_id in (link.endpoint_a, link.endpoint_b):
        state.topo.node(node_id).interface(intf_id).mtu = mtu


def _inject_crash(issue, state):
    node = state.topo.node(issue.dev)
    for link in state.topo.links_of(issue.dev):
        peer_id, peer_intf = link.other_end(issue.dev)
        if state.topo.node(peer_id).status != "crashed":
            state.log(peer_id, "error", simcore.LOG_NEIGHBOR_LOST.format(intf=peer_intf, peer=issue.dev))
    node.status = "crashed"


def _inject_host_ip(issue, state):
    node = state.topo.node(issue.dev)
    hosts = sorted(n.id for n in state.topo.hosts())
    default = f"10.250.{hosts.index(issue.dev) % 256}.10"
    node.interfaces[0].ip = str(issue.params.get("ip", default))


def _inject_netmask(issue, state):
    node = state.topo.node(issue.dev)
    node.interfaces[0].netmask = int(issue.params.get("prefix", 8))


def _inject_ospf_area(issue, state):
    node = state.topo.node(issue.dev)
    intf = issue.params["interface"]
    node.config.ospf_area_by_interface[intf] = int(issue.params.get("area", 7))
    state.log(issue.dev, "error", simcore.LOG_OSPF.format(intf=intf))


def _victim_prefix(state, victim):
    return f"{state.node_primary_ip(victim)}/32"


def _inject_blackhole(issue, state):
    node = state.topo.node(issue.dev)
    node.config.static_routes.append((_victim_prefix(state, issue.params["victim"]), BLACKHOLE))


def _inject_fwd_entry(issue, state):
    node = state.topo.node(issue.dev)
    victim = issue.params["victim"]
    wrong = next(h for h in _attached_hosts(state.topo, issue.dev) if h != victim)
    node.config.static_routes.append((_victim_prefix(state, victim), wrong))


def _inject_loop(issue, state):
    dev, peer = issue.dev, issue.params["peer"]
    prefix = _victim_prefix(state, issue.params["victim"])
    state.topo.node(dev).config.static_routes.append((prefix, peer))
    state.topo.node(peer).config.static_routes.append((prefix, dev))


def _inject_icmp_acl(issue, state):
    state.topo.node(issue.dev).config.acl_rules.insert(0, AclRule(action="deny", proto="icmp"))


def _inject_http_acl(issue, state):
    state.topo.node(issue.dev).config.acl_rules.insert(0, AclRule(action="deny", proto="tcp", ports=(80, 443)))


def _burst_trigger_from_issue(issue, state, kind):
    link = state.find_link(issue.dev, issue.comp)
    dst = link.other_end(issue.dev)[0]
    defaults = {"incast_od": (20.0, 1000, "all"), "burst": (1.0, 50, "auto")}[kind]
    interval, burst_len, src = defaults
    rate = float(issue.params.get("rate_mbps", BURST_OVERSUBSCRIPTION * link.capacity))
    src = issue.params.get("src", src)
    if kind == "burst" and src == "auto":
        src = "*"
    return TriggerSpec(
        kind=kind,
        src=src,
        dst=dst,
        interval_s=float(issue.params.get("interval_s", interval)),
        rate=rate,
        burst_len_ms=int(issue.params.get("burst_len_ms", burst_len)),
    )


def _inject_incast(issue, state):
    trig = _burst_trigger_from_issue(issue, state, "incast_od")
    _arm_trigger(state, trig, state.clock.now, tag=f"incast:{issue.dev}")


def _inject_microburst(issue, state):
    trig = _burst_trigger_from_issue(issue, state, "burst")
    _arm_trigger(state, trig, state.clock.now, tag=f"microburst:{issue.dev}")


def _inject_dos(issue, state):
    svc = state.topo.node(issue.dev).config.services[0]
    rate = float(issue.params.get("rate_rps", 2 * svc.capacity_rps))
    trig = TriggerSpec(kind="request_flood", src="all", dst=issue.dev, rate=rate)
    _arm_trigger(state, trig, state.clock.now, tag=f"dos:{issue.dev}")


_INJECTORS = {
    "link_down": _inject_link_down,
    "link_detached": _inject_link_detached,
    "link_flap": _inject_link_flap,
    "faulty_cable": _inject_faulty_cable,
    "mtu_fragmentation_disabled": _inject_mtu,
    "host_crash": _inject_crash,
    "switch_crash": _inject_crash,
    "host_ip_misconfig": _inject_host_ip,
    "incorrect_netmask": _inject_netmask,
    "ospf_area_mismatch": _inject_ospf_area,
    "static_blackhole": _inject_blackhole,
    "fwd_entry_misconfig": _inject_fwd_entry,
    "forwarding_loop": _inject_loop,
    "icmp_acl_block": _inject_icmp_acl,
    "http_acl_block": _inject_http_acl,
    "incast_traffic": _inject_incast,
    "microburst": _inject_microburst,
    "dos_flood": _inject_dos,
}


# --- signal liveness -----------------------------------------------------------------

def find_pair_crossing(state: NetworkState, dev: str, intf: str = None,
                       proto: str = "icmp", port=None, size: int = 64):
    """First host pair (in order) whose current path crosses dev (or the
    given egress interface)."""
    hosts = sorted(n.id for n in state.topo.hosts())
    for a in hosts:
        for b in hosts:
            if a == b:
                continue
            walk = state.walk_path(a, b, proto=proto, port=port, size=size)
            if walk.status != "ok":
                continue
            if intf is None:
                if dev in walk.hops:
                    return (a, b)
            elif (dev, intf) in walk.dirs:
                return (a, b)
    return None


def _has_log(state, node, needle):
    return any(e.node == node and needle in e.text for e in state.logs)


def check_signal(issue: Issue, state: NetworkState) -> tuple:
    """Does the injected issue already show at least one distinguishing
    signal (log entry, counter, or probe failure)? Returns (ok, detail)."""
    cause = issue.root_cause
    dev = issue.dev
    if cause == "link_down":
        return (_has_log(state, dev, "LINK_DOWN"), "LINK_DOWN log")
    if cause == "link_detached":
        return (_has_log(state, dev, "PHY_DOWN"), "PHY_DOWN log")
    if cause == "link_flap":
        n = sum(1 for e in state.logs if e.node == dev and "LINK_FLAP" in e.text)
        return (n >= 2, f"{n} LINK_FLAP transitions")
    if cause == "faulty_cable":
        link = state.find_link(dev, issue.comp)
        other, ointf = link.other_end(dev)
        errs = state.stats[(other, ointf)].rx_errors + state.stats[(dev, issue.comp)].rx_errors
        return (errs > 0, f"rx_errors={errs}")
    if cause == "mtu_fragmentation_disabled":
        pair = find_pair_crossing(state, dev, intf=issue.comp, proto="icmp", size=64)
        if pair is None:
            return (False, "no pair crosses the link")
        res = state.send_probe("icmp", pair[0], pair[1], size=1500)[0]
        return (not res.success and res.fail_reason == "mtu_exceeded", f"probe: {res.fail_reason or 'ok'}")
    if cause in ("host_crash", "switch_crash"):
        lost = any("NEIGHBOR_LOST" in e.text and dev in e.text for e in state.logs)
        return (lost and state.topo.node(dev).status == "crashed", "NEIGHBOR_LOST log")
    if cause == "host_ip_misconfig":
        other = next(h.id for h in state.topo.hosts() if h.id != dev)
        out = state.walk_path(dev, other).status != "ok"
        into = state.walk_path(other, dev).status != "ok"
        return (out and into, "host unreachable both ways")
    if cause == "incorrect_netmask":
        hosts = sorted(n.id for n in state.topo.hosts() if n.id != dev)
        for other in hosts:
            out_bad = state.walk_path(dev, other).status != "ok"
            back_ok = state.walk_path(other, dev).status == "ok"
            if out_bad and back_ok:
                return (True, f"asymmetric reachability vs {other}")
        return (False, "no asymmetry observed")
    if cause == "ospf_area_mismatch":
        return (_has_log(state, dev, "OSPF adjacency failure"), "OSPF log")
    if cause == "static_blackhole":
        victim = issue.params["victim"]
        src = next(h.id for h in sorted(state.topo.hosts(), key=lambda n: n.id)
                   if h.id != victim and h.id not in _attached_hosts(state.topo, dev))
        res = state.send_probe("icmp", src, victim)[0]
        return (not res.success and res.fail_reason == "blackholed" and res.fail_node == dev,
                f"probe: {res.fail_reason or 'ok'}@{res.fail_node}")
    if cause == "fwd_entry_misconfig":
        victim = issue.params["victim"]
        src = _attached_hosts(state.topo, dev)[0]
        res = state.send_probe("icmp", src, victim)[0]
        ok = (not res.success and res.fail_reason == "unreachable"
              and state.topo.node(res.fail_node).kind == "host" and res.fail_node != victim)
        return (ok, f"probe: {res.fail_reason or 'ok'}@{res.fail_node}")
    if cause == "forwarding_loop":
        victim = issue.params["victim"]
        src = _attached_hosts(state.topo, dev)[0]
        res = state.send_probe("icmp", src, victim)[0]
        return (not res.success and res.fail_reason == "ttl_exceeded", f"probe: {res.fail_reason or 'ok'}")
    if cause == "icmp_acl_block":
        pair = find_pair_crossing(state, dev, proto="tcp")
        if pair is None:
            return (False, "no pair crosses the device")
        icmp = state.send_probe("icmp", pair[0], pair[1])[0]
        tcp = state.send_probe("tcp_connect", pair[0], pair[1])[0]
        return (not icmp.success and icmp.fail_reason == "acl_denied" and tcp.success,
                "icmp denied while tcp passes")
    if cause == "http_acl_block":
        pair = find_pair_crossing(state, dev, proto="icmp")
        if pair is None:
            return (False, "no pair crosses the device")
        http = state.send_probe("http", pair[0], pair[1])[0]
        icmp = state.send_probe("icmp", pair[0], pair[1])[0]
        return (not http.success and http.fail_reason == "acl_denied" and icmp.success,
                "http denied while icmp passes")
    if cause in _BURST_CAUSES:
        st = state.stats[(dev, issue.comp)]
        link = state.find_link(dev, issue.comp)
        return (st.queue_peak >= 0.9 * link.buffer and st.drops_queue > 0,
                f"queue_peak={st.queue_peak} drops_queue={st.drops_queue}")
    if cause == "dos_flood":
        surged = _has_log(state, dev, "HTTP_SURGE")
        other = next(h.id for h in state.topo.hosts() if h.id != dev)
        res = state.send_probe("http", other, dev)[0]
        return (surged and not res.success and res.fail_reason == "service_overloaded",
                f"probe: {res.fail_reason or 'ok'}")
    raise ValueError(f"unknown root cause {cause!r}")
