"""Agent access layer: tool registry, policy-checked dispatch, and the
invocation record stream.

Every call, including denied and malformed ones, appends exactly one
gap-free record. Permitted calls snapshot the ground-truth telemetry
state before executing and are charged virtual time from a fixed cost
table, which is the only way agents move the clock besides wait().
"""

from __future__ import annotations

import fnmatch
import time
from dataclasses import dataclass, field

from .simcore import NetworkState

WAIT_MAX_MS = 600000


@dataclass
class ToolParam:
    type: str  # "string" | "int" | "number" | "object"
    required: bool = False
    default: object = None
    node: bool = False  # value names a node: subject to the access policy
    device: bool = False  # tool executes on this node's management plane

    def describe(self) -> dict:
        d = {"type": self.type, "required": self.required}
        if self.default is not None:
            d["default"] = self.default
        return d


@dataclass
class ToolDescriptor:
    name: str
    description: str
    params: dict  # name -> ToolParam
    scope_kind: str  # "node_scoped" | "global"

    def describe(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "param_schema": {k: p.describe() for k, p in self.params.items()},
            "scope_kind": self.scope_kind,
        }


@dataclass
class AccessPolicy:
    node_globs: list = field(default_factory=lambda: ["*"])
    tool_globs: list = field(default_factory=lambda: ["*"])

    @classmethod
    def from_dict(cls, doc: dict) -> "AccessPolicy":
        return cls(node_globs=list(doc.get("nodes", ["*"])), tool_globs=list(doc.get("tools", ["*"])))

    def allows_tool(self, name: str) -> bool:
        return any(fnmatch.fnmatchcase(name, g) for g in self.tool_globs)

    def allows_node(self, node_id: str) -> bool:
        return any(fnmatch.fnmatchcase(node_id, g) for g in self.node_globs)


class ToolError(Exception):
    """kind selects the wire error code: invalid_params, unknown_tool,
    already_submitted, not_active, or runtime."""

    def __init__(self, reason: str, kind: str = "runtime", cost_ms: float = 0.0):
        super().__init__(reason)
        self.reason = reason
        self.kind = kind
        self.cost_ms = cost_ms


@dataclass
class ToolInvocationRecord:
    seq: int
    virtual_ts: int
    wall_ts: float
    tool: str
    args: dict
    outcome: str = "tool_error"  # "ok" | "denied" | "tool_error"
    result: object = None
    reason: str = ""
    error_kind: str = ""
    snapshot_id: str = ""
    charged_ms: int = 0

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "virtual_ts": self.virtual_ts,
            "wall_ts": self.wall_ts,
            "tool": self.tool,
            "args": self.args,
            "outcome": self.outcome,
            "result": self.result,
            "reason": self.reason,
            "error_kind": self.error_kind,
            "snapshot_id": self.snapshot_id,
            "charged_ms": self.charged_ms,
        }


def _p(type_, required=False, default=None, node=False, device=False):
    return ToolParam(type=type_, required=required, default=default, node=node, device=device)


TOOLSET = [
    ToolDescriptor("ping", "ICMP echo for reachability and latency",
                   {"src": _p("string", True, node=True, device=True),
                    "dst": _p("string", True, node=True),
                    "count": _p("int", default=4), "size": _p("int", default=64)}, "node_scoped"),
    ToolDescriptor("traceroute", "Trace packet forwarding paths",
                   {"src": _p("string", True, node=True, device=True),
                    "dst": _p("string", True, node=True)}, "node_scoped"),
    ToolDescriptor("iperf", "Measure achievable end-to-end bandwidth",
                   {"src": _p("string", True, node=True, device=True),
                    "dst": _p("string", True, node=True, device=True),
                    "duration_s": _p("int", default=2)}, "node_scoped"),
    ToolDescriptor("get_reachability", "Check pairwise reachability among all hosts", {}, "global"),
    ToolDescriptor("tcp_connect", "Test TCP connection establishment to a target",
                   {"src": _p("string", True, node=True, device=True),
                    "dst": _p("string", True, node=True),
                    "port": _p("int", default=80)}, "node_scoped"),
    ToolDescriptor("http_probe", "Measure HTTP request/response latency",
                   {"src": _p("string", True, node=True, device=True),
                    "dst": _p("string", True, node=True)}, "node_scoped"),
    ToolDescriptor("port_counters", "Retrieve interface statistics (bytes, packets, errors)",
                   {"node": _p("string", True, node=True, device=True),
                    "intf": _p("string", True)}, "node_scoped"),
    ToolDescriptor("routing_table", "Retrieve routing information from routers",
                   {"node": _p("string", True, node=True, device=True)}, "node_scoped"),
    ToolDescriptor("get_config", "Fetch device configuration files",
                   {"node": _p("string", True, node=True, device=True)}, "node_scoped"),
    ToolDescriptor("get_logs", "Fetch system and event logs",
                   {"node": _p("string", True, node=True, device=True),
                    "since_ms": _p("int", default=0)}, "node_scoped"),
    ToolDescriptor("queue_stats", "Query egress queue depth history on an interface",
                   {"node": _p("string", True, node=True, device=True),
                    "intf": _p("string", True), "since_ms": _p("int", default=0)}, "node_scoped"),
    ToolDescriptor("list_nodes", "List devices with kind and management status", {}, "global"),
    ToolDescriptor("wait", "Let virtual time pass to observe evolution",
                   {"ms": _p("int", True)}, "global"),
    ToolDescriptor("submit", "Submit the final diagnosis and end the run",
                   {"payload": _p("object", True)}, "global"),
]

TOOL_INDEX = {t.name: t for t in TOOLSET}

# Per-tool virtual-time charges (ms); dynamic parts are added by the tool.
FLAT_COST_MS = {
    "get_reachability": 1000,
    "port_counters": 200,
    "routing_table": 200,
    "get_config": 200,
    "get_logs": 200,
    "queue_stats": 200,
    "list_nodes": 100,
    "submit": 0,
}
PROBE_OVERHEAD_MS = 100
PROBE_TIMEOUT_MS = 1000


class Gateway:
    """Dispches tool calls against one simulator under one policy."""

    def __init__(self, state: NetworkState, policy: AccessPolicy, universe: list,
                 on_submit=None, clock_wall=time.time):
        self.state = state
        self.policy = policy
        self.universe = set(map(tuple, universe))
        self.on_submit = on_submit
        self.records = []
        self.active = True
        self.submitted = False
        self._iperf_seq = 0
        self._wall = clock_wall

    # -- dispatch ----------------------------------------------------------------

    def list_tools(self) -> list:
        return [t.describe() for t in TOOLSET if self.policy.allows_tool(t.name)]

    def call_tool(self, name: str, args: dict, render: str = None) -> ToolInvocationRecord:
        """Run one call through the full envelope: policy, validation,
        snapshot, execution, time charge, record. render="cli" swaps the
        structured result for human-style text (recorded as returned)."""
        record = ToolInvocationRecord(
            seq=len(self.records) + 1,
            virtual_ts=self.state.clock.now,
            wall_ts=round(self._wall(), 6),
            tool=name,
            args=dict(args or {}),
        )
        self.records.append(record)
        try:
            tool = TOOL_INDEX.get(name)
            if tool is None:
                raise ToolError(f"unknown tool {name!r}", kind="unknown_tool")
            if not self._permitted(tool, record.args):
                record.outcome = "denied"
                record.reason = "blocked by access policy"
                return record
            if self.submitted:
                raise ToolError("already submitted", kind="already_submitted")
            if not self.active:
                raise ToolError("agent phase not active", kind="not_active")
            clean = self._validate(tool, record.args)
            snap = self.state.snapshot()
            record.snapshot_id = snap.id
            result, cost_ms = self._execute(name, clean)
            if render == "cli":
                result = {"text": render_cli(name, result)}
            record.outcome = "ok"
            record.result = result
            record.charged_ms = self._charge(name, cost_ms)
        except ToolError as err:
            record.outcome = "tool_error"
            record.reason = err.reason
            record.error_kind = err.kind
            record.charged_ms = self._charge(name, err.cost_ms)
        return record

    def _charge(self, name: str, cost_ms: float) -> int:
        if name in ("wait", "iperf"):  # these advance the clock themselves
            return int(cost_ms)
        if cost_ms <= 0:
            return 0
        tick = self.state.clock.tick
        charged = int(-(-cost_ms // tick) * tick)
        self.state.advance(charged)
        return charged

    def _permitted(self, tool: ToolDescriptor, args: dict) -> bool:
        if not self.policy.allows_tool(tool.name):
            return False
        if tool.scope_kind == "global":
            return True
        for pname, param in tool.params.items():
            if param.node and pname in args and isinstance(args[pname], str):
                if not self.policy.allows_node(args[pname]):
                    return False
        return True

    def _validate(self, tool: ToolDescriptor, args: dict) -> dict:
        clean = {}
        for pname, value in args.items():
            if pname not in tool.params:
                raise ToolError(f"unknown parameter {pname!r}", kind="invalid_params")
        for pname, param in tool.params.items():
            if pname not in args:
                if param.required:
                    raise ToolError(f"missing required parameter {pname!r}", kind="invalid_params")
                clean[pname] = param.default
                continue
            value = args[pname]
            ok = {
                "string": lambda v: isinstance(v, str),
                "int": lambda v: isinstance(v, int) and not isinstance(v, bool),
                "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
                "object": lambda v: isinstance(v, dict),
            }[param.type](value)
            if not ok:
                raise ToolError(f"parameter {pname!r} must be {param.type}", kind="invalid_params")
            clean[pname] = value
        for pname, param in tool.params.items():
            if (param.node or param.device) and clean.get(pname) is not None:
                if clean[pname] not in self.state.topo.node_map():
                    raise ToolError(f"parameter {pname!r}: unknown node {clean[pname]!r}", kind="invalid_params")
        for pname, param in tool.params.items():
            if param.device and clean.get(pname) is not None:
                if self.state.topo.node(clean[pname]).status == "crashed":
                    raise ToolError(f"{clean[pname]}: unreachable from MGMT", cost_ms=200)
        return clean

    # -- tool implementations -------------------------------------------------------

    def _execute(self, name: str, a: dict):
        return getattr(self, f"_tool_{name}")(a)

    def _tool_ping(self, a):
        count = max(1, min(int(a["count"]), 50))
        probes = self.state.send_probe("icmp", a["src"], a["dst"], size=a["size"], count=count)
        cost = sum((p.rtt_ms if p.success else PROBE_TIMEOUT_MS) + PROBE_OVERHEAD_MS for p in probes)
        ok = [p for p in probes if p.success]
        result = {
            "probes": [p.to_dict() for p in probes],
            "sent": count,
            "received": len(ok),
            "loss_pct": round(100.0 * (count - len(ok)) / count, 2),
        }
        if ok:
            result["rtt_avg_ms"] = round(sum(p.rtt_ms for p in ok) / len(ok), 3)
        return result, cost

    def _tool_traceroute(self, a):
        trace = self.state.trace_path(a["src"], a["dst"])
        cost = 300 + 30 * len(trace["hops"])
        return trace, cost

    def _tool_iperf(self, a):
        duration = max(1, min(int(a["duration_s"]), 60))
        self._iperf_seq += 1
        flow_id = f"iperf:{self._iperf_seq}"
        from .simcore import Flow

        flow = Flow(id=flow_id, src=a["src"], dst=a["dst"], demand=1e9,
                    proto="tcp_bulk", port=5001, start=self.state.clock.now)
        self.state.install_flow(flow)
        before = flow.delivered
        self.state.advance(duration * 1000)
        delivered = flow.delivered - before
        self.state.remove_flow(flow_id)
        mbps = delivered * 8 / (duration * 1e6)
        return {"duration_s": duration, "transferred_bytes": delivered,
                "achieved_mbps": round(mbps, 3)}, duration * 1000

    def _tool_get_reachability(self, a):
        m = self.state.reachability_matrix()
        holes = [[i, j] for i in m["hosts"] for j in m["hosts"] if not m["matrix"][i][j]]
        return {"hosts": m["hosts"], "matrix": m["matrix"], "unreachable_pairs": holes}, FLAT_COST_MS["get_reachability"]

    def _tool_tcp_connect(self, a):
        res = self.state.send_probe("tcp_connect", a["src"], a["dst"], count=1, port=a["port"])[0]
        d = res.to_dict()
        d["port"] = a["port"]
        cost = (d.get("rtt_ms", 0) or PROBE_TIMEOUT_MS) + 200
        return d, cost

    def _tool_http_probe(self, a):
        res = self.state.send_probe("http", a["src"], a["dst"], count=1)[0]
        d = res.to_dict()
        if res.success:
            d["latency_ms"] = d.pop("rtt_ms")
            cost = d["latency_ms"] + 200
        else:
            cost = PROBE_TIMEOUT_MS + 200
        return d, cost

    def _tool_port_counters(self, a):
        key = (a["node"], a["intf"])
        stats = self.state.stats.get(key)
        if stats is None:
            raise ToolError(f"no interface {a['intf']!r} on {a['node']}", kind="invalid_params")
        link = self.state.find_link(*key)
        d = stats.to_dict()
        d["oper_state"] = {"up": "up", "down": "down", "detached": "no-carrier"}[link.state]
        return d, FLAT_COST_MS["port_counters"]

    def _tool_routing_table(self, a):
        return {"node": a["node"], "routes": self.state.routing_table_view(a["node"])}, FLAT_COST_MS["routing_table"]

    def _tool_get_config(self, a):
        return self.state.config_view(a["node"]), FLAT_COST_MS["get_config"]

    def _tool_get_logs(self, a):
        since = max(0, int(a["since_ms"]))
        entries = [e.to_dict() for e in self.state.logs if e.node == a["node"] and e.t >= since]
        return {"node": a["node"], "entries": entries}, FLAT_COST_MS["get_logs"]

    def _tool_queue_stats(self, a):
        try:
            series = self.state.queue_series(a["node"], a["intf"], since_ms=int(a["since_ms"]))
        except KeyError as exc:
            raise ToolError(str(exc), kind="invalid_params")
        st = self.state.stats[(a["node"], a["intf"])]
        return {
            "node": a["node"],
            "intf": a["intf"],
            "queue_len": st.queue_len,
            "queue_peak": st.queue_peak,
            "buffer_bytes": self.state.find_link(a["node"], a["intf"]).buffer,
            "series": [[t, q] for t, q in series],
            "series_kind": "change_points",
        }, FLAT_COST_MS["queue_stats"]

    def _tool_list_nodes(self, a):
        nodes = [
            {
                "id": n.id,
                "kind": n.kind,
                "status": "unreachable from MGMT" if n.status == "crashed" else "up",
            }
            for n in self.state.topo.nodes
        ]
        return {"nodes": nodes}, FLAT_COST_MS["list_nodes"]

    def _tool_wait(self, a):
        ms = int(a["ms"])
        if not (0 < ms <= WAIT_MAX_MS):
            raise ToolError(f"parameter 'ms' must be in (0, {WAIT_MAX_MS}]", kind="invalid_params")
        tick = self.state.clock.tick
        ms = int(-(-ms // tick) * tick)
        self.state.advance(ms)
        return {"waited_ms": ms}, ms

    def _tool_submit(self, a):
        payload = a["payload"]
        problems = []
        if not isinstance(payload.get("detected"), bool):
            problems.append("payload.detected must be a boolean")
        loc = payload.get("localization", [])
        if not isinstance(loc, list):
            problems.append("payload.localization must be a list of [node, component] pairs")
            loc = []
        bad_entities = []
        for e in loc:
            if not (isinstance(e, (list, tuple)) and len(e) == 2):
                problems.append(f"localization entry {e!r} is not a [node, component] pair")
            elif tuple(e) not in self.universe:
                bad_entities.append(tuple(e))
        if bad_entities:
            problems.append("localization entries outside the entity universe: "
                            + ", ".join(f"({n}, {c})" for n, c in sorted(bad_entities)))
        from .incident import ROOT_CAUSES

        causes = payload.get("root_causes", [])
        if not isinstance(causes, list):
            problems.append("payload.root_causes must be a list")
        else:
            unknown = [c for c in causes if c not in ROOT_CAUSES]
            if unknown:
                problems.append(f"unknown root causes: {sorted(unknown)}")
        if problems:
            raise ToolError("; ".join(problems), kind="invalid_params")
        self.submitted = True
        if self.on_submit is not None:
            self.on_submit(payload)
        return {"accepted": True}, 0

    # -- accounting ------------------------------------------------------------------

    def charged_total_ms(self) -> int:
        return sum(r.charged_ms for r in self.records)


def render_cli(tool: str, result) -> str:
    """Terse operator-console rendering of a tool result."""
    import json as _json

    if tool == "ping":
        lines = []
        for i, p in enumerate(result["probes"]):
            if p.get("success"):
                lines.append(f"seq={i} time={p['rtt_ms']} ms")
            else:
                where = f" at {p['fail_node']}" if p.get("fail_node") else ""
                lines.append(f"seq={i} {p['fail_reason']}{where}")
        lines.append(f"{result['sent']} sent, {result['received']} received, {result['loss_pct']}% loss")
        return "\n".join(lines)
    if tool == "traceroute":
        lines = [f"{i + 1}  {h['node']}  {h['rtt_ms']} ms" for i, h in enumerate(result["hops"])]
        if not result.get("complete"):
            lines.append(f"*  {result.get('fail_reason')} at {result.get('fail_node')}")
        return "\n".join(lines)
    if tool == "port_counters":
        return "  ".join(f"{k}={v}" for k, v in result.items())
    if tool == "get_logs":
        return "\n".join(f"[{e['t']} ms] {e['severity'].upper()} {e['text']}" for e in result["entries"]) or "(no entries)"
    if tool == "routing_table":
        rows = []
        for r in result["routes"]:
            via = r["next_hop"] if "interface" not in r else f"{r['next_hop']} dev {r['interface']}"
            rows.append(f"{r['prefix']:20s} via {via} [{r['source']}]")
        return "\n".join(rows)
    if tool == "list_nodes":
        return "\n".join(f"{n['id']:24s} {n['kind']:10s} {n['status']}" for n in result["nodes"])
    return _json.dumps(result, sort_keys=True, indent=2)
