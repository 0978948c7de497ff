"""Deterministic scripted diagnostician.

A fixed decision tree over the arena's diagnostic tools: management
status, reachability matrix, device log sweep, probe-failure reasons,
host configuration analysis, queue-contention sweep, and an HTTP probe
pass. Every branch maps an observed signal to one (device, component,
root cause) finding; the tree keeps going after a finding so composite
incidents surface every cause."""

from __future__ import annotations

import re

from .client import ArenaClient, ArenaError

MAX_CALLS_DEFAULT = 60

LOG_PATTERNS = [
    (re.compile(r"LINK_FLAP (\S+) (?:down|up)"), "link_flap", "intf"),
    (re.compile(r"LINK_DOWN (\S+):"), "link_down", "intf"),
    (re.compile(r"PHY_DOWN (\S+):"), "link_detached", "intf"),
    (re.compile(r"RX_CRC (\S+):"), "faulty_cable", "intf"),
    (re.compile(r"MTU_DROP (\S+):"), "mtu_fragmentation_disabled", "intf"),
    (re.compile(r"OSPF adjacency failure: area mismatch on (\S+)"), "ospf_area_mismatch", "routing"),
    (re.compile(r"HTTP_SURGE"), "dos_flood", "service"),
]

LINK_CLASS = {"link_down", "link_detached", "link_flap", "mtu_fragmentation_disabled"}

# queue episodes at least this long mean sustained convergence (incast);
# anything shorter is a transient spike
INCAST_EPISODE_MS = 300
PROBE_PAIR_BUDGET = 6


class _BudgetExhausted(Exception):
    pass


class BaselineAgent:
    """Collects evidence with at most max_calls tool invocations and
    always submits exactly once."""

    def __init__(self, client: ArenaClient, max_calls: int = MAX_CALLS_DEFAULT):
        self.client = client
        self.max_calls = max_calls
        self.calls_used = 0
        self.findings = set()  # (node, component, root_cause)
        self.notes = []

    # -- tool access with budget ------------------------------------------------

    def _call(self, name, args=None):
        if self.calls_used >= self.max_calls - 1:  # keep one call for submit
            raise _BudgetExhausted()
        self.calls_used += 1
        return self.client.call(name, args or {})

    def _try_call(self, name, args=None):
        try:
            return self._call(name, args)
        except ArenaError as err:
            self.notes.append(f"{name} failed: {err}")
            return None

    # -- stages --------------------------------------------------------------------

    def diagnose(self) -> dict:
        """Run the tree and submit; returns the submitted payload."""
        try:
            self._stage_mgmt_status()
            self._stage_reachability()
            self._stage_log_sweep()
            self._stage_probe_failures()
            self._stage_host_config()
            if not self.findings:
                self._stage_contention()
            if not self.findings:
                self._stage_http()
        except _BudgetExhausted:
            self.notes.append("call budget exhausted")
        payload = self._payload()
        self.client.submit(payload)
        return payload

    def _stage_mgmt_status(self):
        listed = self._call("list_nodes")
        self.nodes = {n["id"]: n for n in listed["nodes"]}
        self.crashed = sorted(n["id"] for n in listed["nodes"] if n["status"] != "up")
        for node_id in self.crashed:
            kind = self.nodes[node_id]["kind"]
            cause = "host_crash" if kind == "host" else "switch_crash"
            self.findings.add((node_id, "system", cause))

    def _stage_reachability(self):
        out = self._call("get_reachability")
        self.hosts = out["hosts"]
        self.matrix = out["matrix"]
        self.holes = [
            (a, b) for a, b in out["unreachable_pairs"]
            if a not in self.crashed and b not in self.crashed
        ]

    def _stage_log_sweep(self):
        for node_id in sorted(self.nodes):
            if node_id in self.crashed:
                continue
            out = self._try_call("get_logs", {"node": node_id})
            if out is None:
                continue
            for entry in out["entries"]:
                for pattern, cause, comp_kind in LOG_PATTERNS:
                    m = pattern.search(entry["text"])
                    if not m:
                        continue
                    comp = m.group(1) if comp_kind == "intf" else comp_kind
                    self.findings.add((node_id, comp, cause))

    def _has_link_class_finding(self):
        return any(cause in LINK_CLASS for _, _, cause in self.findings)

    def _stage_probe_failures(self):
        seen_reasons = set()
        for src, dst in sorted(self.holes)[:PROBE_PAIR_BUDGET]:
            out = self._try_call("ping", {"src": src, "dst": dst, "count": 1})
            if out is None or out["received"] > 0:
                continue
            probe = out["probes"][0]
            reason = probe.get("fail_reason")
            culprit = probe.get("fail_node", "")
            key = (reason, culprit)
            if key in seen_reasons:
                continue
            seen_reasons.add(key)
            if reason == "acl_denied":
                self.findings.add((culprit, "acl", "icmp_acl_block"))
            elif reason == "blackholed":
                self.findings.add((culprit, "routing", "static_blackhole"))
            elif reason == "ttl_exceeded":
                self._classify_loop(src, dst)
            elif reason == "unreachable" and not self._has_link_class_finding():
                self._classify_unreachable(src, dst, culprit)

    def _classify_loop(self, src, dst):
        trace = self._try_call("traceroute", {"src": src, "dst": dst})
        if trace is None:
            return
        names = [h["node"] for h in trace["hops"]]
        repeats = sorted({n for n in names if names.count(n) > 2})
        for node_id in repeats[:2]:
            self.findings.add((node_id, "routing", "forwarding_loop"))

    def _classify_unreachable(self, src, dst, culprit):
        trace = self._try_call("traceroute", {"src": src, "dst": dst})
        if trace is None:
            return
        names = [h["node"] for h in trace["hops"]]
        terminal = trace.get("fail_node", names[-1] if names else src)
        kind = self.nodes.get(terminal, {}).get("kind")
        if kind == "host" and terminal != dst:
            # forwarded to a host that is not the destination: the previous
            # hop holds a bogus forwarding entry
            prev = names[names.index(terminal) - 1] if terminal in names and names.index(terminal) > 0 else src
            if self.nodes.get(prev, {}).get("kind") in ("switch", "router"):
                self.findings.add((prev, "routing", "fwd_entry_misconfig"))

    def _stage_host_config(self):
        # a dead link or crashed device already explains unreachable hosts
        if self._has_link_class_finding() or self.crashed or not self.holes:
            return
        others = lambda x: [h for h in self.hosts if h != x and h not in self.crashed]
        for host in self.hosts:
            if host in self.crashed or not others(host):
                continue
            out_false = sum(1 for h in others(host) if not self.matrix[host][h])
            in_false = sum(1 for h in others(host) if not self.matrix[h][host])
            if out_false == 0:
                continue
            cfg = self._try_call("get_config", {"node": host})
            if cfg is None:
                continue
            itf = cfg["interfaces"][0]
            if itf["netmask"] < 24 and in_false == 0:
                self.findings.add((host, itf["id"], "incorrect_netmask"))
            elif out_false == len(others(host)) and in_false == len(others(host)):
                if self._ip_off_subnet(host, itf["ip"]):
                    self.findings.add((host, itf["id"], "host_ip_misconfig"))

    def _ip_off_subnet(self, host, ip):
        """The address is outside every host subnet the nearest gateway
        carries."""
        probe_src = next((h for h in self.hosts if h != host and h not in self.crashed), None)
        if probe_src is None:
            return False
        trace = self._try_call("traceroute", {"src": probe_src, "dst": host})
        if trace is None:
            return False
        gateway = trace.get("fail_node") or (trace["hops"][-1]["node"] if trace["hops"] else None)
        if gateway is None or self.nodes.get(gateway, {}).get("kind") not in ("switch", "router"):
            return False
        cfg = self._try_call("get_config", {"node": gateway})
        if cfg is None:
            return False
        def in_subnet(addr, net_ip, prefix):
            to_int = lambda s: sum(int(o) << (8 * (3 - i)) for i, o in enumerate(s.split(".")))
            mask = ((1 << prefix) - 1) << (32 - prefix) if prefix else 0
            return (to_int(addr) & mask) == (to_int(net_ip) & mask)
        host_subnets = [i for i in cfg["interfaces"] if i["netmask"] == 24]
        if not host_subnets:
            return False  # inconclusive: the gateway carries no host subnet
        return not any(in_subnet(ip, i["ip"], i["netmask"]) for i in host_subnets)

    def _stage_contention(self):
        candidates = []
        for node_id in sorted(self.nodes):
            if self.nodes[node_id]["kind"] not in ("switch", "router"):
                continue
            cfg = self._try_call("get_config", {"node": node_id})
            if cfg is None:
                continue
            for itf in cfg["interfaces"]:
                if itf["netmask"] != 24:
                    continue  # host-facing egress ports only
                counters = self._try_call("port_counters", {"node": node_id, "intf": itf["id"]})
                if counters is None:
                    continue
                if counters["drops_queue"] > 0 or counters["queue_peak"] > 0:
                    candidates.append((counters["drops_queue"], counters["queue_peak"], node_id, itf["id"]))
        if not candidates:
            return
        _, _, node_id, intf = max(candidates)
        qs = self._try_call("queue_stats", {"node": node_id, "intf": intf})
        if qs is None:
            return
        cause = "incast_traffic" if self._longest_episode(qs) >= INCAST_EPISODE_MS else "microburst"
        self.findings.add((node_id, intf, cause))

    @staticmethod
    def _longest_episode(qs):
        threshold = 0.5 * qs["buffer_bytes"]
        longest, start = 0, None
        for t, q in qs["series"]:
            if q >= threshold and start is None:
                start = t
            elif q < threshold and start is not None:
                longest = max(longest, t - start)
                start = None
        if start is not None and qs["series"]:
            longest = max(longest, qs["series"][-1][0] - start)
        return longest

    def _stage_http(self):
        # probe failures ride inside an ok tool result, not a wire error
        base = next((h for h in self.hosts if h not in self.crashed), None)
        if base is None:
            return
        for other in self.hosts:
            if other == base or other in self.crashed:
                continue
            out = self._try_call("http_probe", {"src": base, "dst": other})
            if out is None or out.get("success", True):
                continue
            if out["fail_reason"] == "acl_denied":
                self.findings.add((out["fail_node"], "acl", "http_acl_block"))
                return
            if out["fail_reason"] == "service_overloaded":
                self.findings.add((out["fail_node"], "service", "dos_flood"))
                return

    # -- submission -------------------------------------------------------------------

    def _payload(self) -> dict:
        localization = sorted({(n, c) for n, c, _ in self.findings})
        causes = sorted({cause for _, _, cause in self.findings})
        lines = [f"{cause} at ({n}, {c})" for n, c, cause in sorted(self.findings, key=lambda f: (f[2], f[0]))]
        return {
            "detected": bool(self.findings),
            "localization": [list(e) for e in localization],
            "root_causes": causes,
            "report_text": "; ".join(lines) if lines else "no anomaly observed",
            "agent_metadata": {"model": "baseline-decision-tree", "steps": self.calls_used},
        }


def baseline_diagnose(endpoint, max_calls: int = MAX_CALLS_DEFAULT) -> dict:
    """Connect, run the tree once, submit, and return the payload."""
    with ArenaClient(endpoint) as client:
        return BaselineAgent(client, max_calls=max_calls).diagnose()
