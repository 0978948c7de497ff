"""Acceptance criteria, one test per gate. Run with -v to get the
per-criterion pass/fail listing; each test also prints its verdict."""

import json
import random
import re
import time

import pytest

from netarena.aal import AccessPolicy, Gateway, TOOL_INDEX
from netarena.evaluator import Submission, aggregate, grade_localization
from netarena.incident import GroundTruth
from netarena.orchestrator import (
    RunConfig,
    RunSession,
    list_incidents,
    run_benchmark,
    smoke_matrix,
)
from netarena.simcore import Flow, NetworkState
from netarena.topology import SCENARIOS, build_scenario, entity_universe

pytestmark = pytest.mark.acceptance


def verdict(name, ok, detail=""):
    print(f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, f"{name}: {detail}"


# --- criterion 1: determinism gate -------------------------------------------------

def scrub(obj):
    if isinstance(obj, dict):
        return {k: scrub(v) for k, v in obj.items() if not k.startswith("wall")}
    if isinstance(obj, list):
        return [scrub(v) for v in obj]
    return obj


def canonical_file(path):
    text = path.read_text()
    if path.suffix == ".jsonl" or path.name.endswith(".jsonl"):
        rows = [scrub(json.loads(line)) for line in text.splitlines() if line.strip()]
        return json.dumps(rows, sort_keys=True)
    return json.dumps(scrub(json.loads(text)), sort_keys=True)


def transcript_player(session):
    """Fixed recorded transcript: generic sweep then a ground-truth copy."""
    fabric = sorted(n.id for n in session.topo.nodes if n.kind in ("switch", "router"))
    hosts = sorted(n.id for n in session.topo.hosts())
    calls = [
        ("list_nodes", {}),
        ("get_reachability", {}),
        ("ping", {"src": hosts[0], "dst": hosts[-1], "count": 2}),
        ("get_logs", {"node": fabric[0]}),
        ("port_counters", {"node": fabric[0], "intf": "eth0"}),
        ("wait", {"ms": 1000}),
        ("queue_stats", {"node": fabric[0], "intf": "eth0"}),
        ("traceroute", {"src": hosts[0], "dst": hosts[-1]}),
        ("wait", {"ms": 4000}),
        ("get_logs", {"node": fabric[-1]}),
    ]
    for i, (name, args) in enumerate(calls):
        session.dispatch({"id": i + 1, "method": "tools/call", "params": {"name": name, "arguments": args}})
    payload = {
        "detected": session.truth.detected_expected,
        "localization": [list(e) for e in session.truth.entities],
        "root_causes": sorted(session.truth.cause_set),
        "report_text": "transcript",
        "agent_metadata": {"model": "transcript-player", "steps": len(calls)},
    }
    session.dispatch({"id": 99, "method": "tools/call",
                      "params": {"name": "submit", "arguments": {"payload": payload}}})


def test_determinism_gate(tmp_path):
    from netarena.orchestrator import replay

    t0 = time.time()
    incidents = [e for e in list_incidents() if not e["template"]]
    assert len(incidents) >= 18
    mismatches = []
    for entry in incidents:
        dirs = []
        for run_idx in (0, 1):
            out = tmp_path / f"{entry['name']}-{run_idx}"
            report = run_benchmark(RunConfig(incident=entry["name"], out_dir=str(out)), transcript_player)
            dirs.append(out)
        for fname in ("report.json", "events.jsonl"):
            a = canonical_file(dirs[0] / fname)
            b = canonical_file(dirs[1] / fname)
            if a != b:
                mismatches.append(f"{entry['name']}/{fname}")
        # artifact sufficiency: replay reproduces the persisted report
        if replay(dirs[0]).to_json() != (dirs[0] / "report.json").read_text():
            mismatches.append(f"{entry['name']}/replay")
    elapsed = time.time() - t0
    verdict("determinism-gate", not mismatches and elapsed < 300,
            f"{len(incidents)} incidents x2 runs + replay in {elapsed:.1f}s; mismatches={mismatches}")


# --- criterion 2: smoke matrix ------------------------------------------------------

def test_smoke_matrix():
    t0 = time.time()
    rows = smoke_matrix()
    failures = [r["incident"] for r in rows if not r["pass"]]
    elapsed = time.time() - t0
    covered = {r["incident"] for r in rows}
    verdict("smoke-matrix", len(rows) >= 18 and not failures and elapsed < 600,
            f"{len(rows)} incidents in {elapsed:.1f}s; failures={failures}; coverage={len(covered)}")


# --- criterion 3: conservation suite -------------------------------------------------

def test_conservation_suite():
    rng = random.Random(20240917)
    ticks_checked = 0
    violations = 0
    for trial in range(12):
        scenario = SCENARIOS[trial % len(SCENARIOS)]
        size = "M" if trial % 5 == 0 else "S"
        state = NetworkState(build_scenario(scenario, size, trial))
        hosts = sorted(n.id for n in state.topo.hosts())
        for i in range(rng.randrange(6, 16)):
            a, b = rng.sample(hosts, 2)
            proto = rng.choice(["udp", "tcp_bulk", "udp"])
            state.install_flow(Flow(id=f"f{i}", src=a, dst=b,
                                    demand=rng.uniform(0.5, 400.0), proto=proto,
                                    port=None if proto == "udp" else 5001))
        for step in range(850):
            if step and step % 200 == 0:
                link = state.topo.links[rng.randrange(len(state.topo.links))]
                link.state = "down" if link.state == "up" else "up"
                state.mark_dirty()
            state.advance(10)
            ticks_checked += 1
            for key, led in state.last_ledger.items():
                if led["offered"] - led["delivered"] - led["dropped"] - led["queued_delta"] != 0:
                    violations += 1
                if led["delivered"] > int(state.find_link(*key).capacity * 125) * 10:
                    violations += 1
    verdict("conservation-suite", ticks_checked >= 10000 and violations == 0,
            f"{ticks_checked} ticks, {violations} violations")


# --- criterion 4: routing oracle ------------------------------------------------------

def oracle_distance(state, src, dst):
    edges = {}
    for link in state.topo.links:
        if link.state != "up":
            continue
        na, nb = state.topo.node(link.endpoint_a[0]), state.topo.node(link.endpoint_b[0])
        if na.status == "crashed" or nb.status == "crashed":
            continue
        ia, ib = na.interface(link.endpoint_a[1]), nb.interface(link.endpoint_b[1])
        if ia.admin_state != "up" or ib.admin_state != "up":
            continue
        if na.kind == "router" and nb.kind == "router":
            if na.config.ospf_area_by_interface.get(ia.id, 0) != nb.config.ospf_area_by_interface.get(ib.id, 0):
                continue
        edges.setdefault(na.id, set()).add(nb.id)
        edges.setdefault(nb.id, set()).add(na.id)
    dist = {src: 0}
    frontier = [src]
    while frontier:
        nxt = []
        for x in frontier:
            node = state.topo.node(x)
            if x != src and node.kind in ("host", "controller"):
                continue
            for y in sorted(edges.get(x, ())):
                if y not in dist:
                    dist[y] = dist[x] + 1
                    nxt.append(y)
        frontier = nxt
    return dist.get(dst)


def test_routing_oracle_100_instances():
    rng = random.Random(4242)
    disagreements = []
    for trial in range(100):
        scenario = SCENARIOS[trial % len(SCENARIOS)]
        size = "M" if trial % 4 == 0 else "S"
        state = NetworkState(build_scenario(scenario, size, trial))
        links = state.topo.links
        n_fail = rng.randrange(0, max(2, len(links) // 3))
        for link in rng.sample(links, k=n_fail):
            link.state = "down"
        state.mark_dirty()
        hosts = sorted(n.id for n in state.topo.hosts())
        for node in state.topo.nodes:
            for h in hosts:
                if node.id == h:
                    continue
                walk = state.walk_path(node.id, h)
                d = oracle_distance(state, node.id, h)
                if (walk.status == "ok") != (d is not None):
                    disagreements.append((trial, node.id, h, "reach"))
                elif walk.status == "ok" and len(walk.hops) != d:
                    disagreements.append((trial, node.id, h, "dist"))
    verdict("routing-oracle", not disagreements, f"100 instances; disagreements={disagreements[:5]}")


# --- criterion 5: evaluator oracle ----------------------------------------------------

def test_evaluator_oracle():
    rng = random.Random(11)
    bad = 0
    for _ in range(1000):
        n = rng.randrange(1, 201)
        uni = [(f"n{i}", "c") for i in range(n)]
        t_idx = {i for i in range(n) if rng.random() < 0.25}
        p_idx = {i for i in range(n) if rng.random() < 0.25}
        truth = GroundTruth(True, sorted(uni[i] for i in t_idx), (), [0])
        res = grade_localization(Submission(localization=[uni[i] for i in p_idx]), truth, uni)
        tp = len(t_idx & p_idx)
        fp = len(p_idx - t_idx)
        fn = len(t_idx - p_idx)
        tn = n - tp - fp - fn
        if (res.tp, res.fp, res.fn, res.tn) != (tp, fp, fn, tn):
            bad += 1
        if res.exact_match != (t_idx == p_idx):
            bad += 1
    # aggregation: counting oracle over 100 synthetic reports
    from tests.test_evaluator import report_with

    reports, want = [], 0
    rng2 = random.Random(12)
    for _ in range(100):
        flag = rng2.random() < 0.5
        want += flag
        reports.append(report_with(detect=flag))
    frac = aggregate(reports)[0]["Det. Acc."]
    agg_ok = abs(frac - want / 100) < 1e-12
    verdict("evaluator-oracle", bad == 0 and agg_ok, f"mask mismatches={bad}, agg ok={agg_ok}")


# --- criterion 6: policy fuzz ----------------------------------------------------------

def glob_rx(g):
    return re.compile("^" + "".join(".*" if c == "*" else "." if c == "?" else re.escape(c) for c in g) + "$")


def oracle_permits(policy, name, args):
    tool = TOOL_INDEX[name]
    if not any(glob_rx(g).match(name) for g in policy.tool_globs):
        return False
    if tool.scope_kind == "global":
        return True
    for pname, param in tool.params.items():
        if param.node and pname in args and isinstance(args[pname], str):
            if not any(glob_rx(g).match(args[pname]) for g in policy.node_globs):
                return False
    return True


FUZZ_TOOLS = ["ping", "traceroute", "get_reachability", "tcp_connect", "http_probe",
              "port_counters", "routing_table", "get_config", "get_logs", "queue_stats", "list_nodes"]

GLOB_POOL = ["*", "pod0.*", "pod*", "spine.s?", "*.leaf0", "*h0", "core.*", "acc?.sw", "???", ""]


def test_policy_fuzz_1000():
    rng = random.Random(31337)
    topo = build_scenario("datacenter_clos", "S", 0)
    universe = entity_universe(topo)
    nodes = [n.id for n in topo.nodes]
    state = NetworkState(topo)
    mismatches = 0
    leaks = 0
    for _ in range(1000):
        policy = AccessPolicy(
            node_globs=rng.sample(GLOB_POOL, k=rng.randrange(1, 4)),
            tool_globs=rng.sample(["*", "ping", "get_*", "q*", "route?ng_table", "list_nodes"], k=rng.randrange(1, 3)),
        )
        gw = Gateway(state, policy, universe)
        name = rng.choice(FUZZ_TOOLS)
        args = {}
        for pname, param in TOOL_INDEX[name].params.items():
            if param.type == "string":
                args[pname] = rng.choice(nodes)
            elif param.type == "int" and rng.random() < 0.3:
                args[pname] = rng.randrange(0, 4)
        before = state.fingerprint()
        rec = gw.call_tool(name, args)
        if (rec.outcome == "denied") == oracle_permits(policy, name, args):
            mismatches += 1
        if rec.outcome == "denied" and state.fingerprint() != before:
            leaks += 1
    verdict("policy-fuzz", mismatches == 0 and leaks == 0,
            f"1000 pairs, {mismatches} decision mismatches, {leaks} mutation leaks")


# --- criterion 7: scale shape check ------------------------------------------------------

def test_scale_shape():
    targets = {"S": 11, "M": 27, "L": 101}
    offsets = {}
    ok = True
    for size, target in targets.items():
        mean = sum(len(build_scenario(s, size, 0).nodes) for s in SCENARIOS) / len(SCENARIOS)
        offsets[size] = round(mean, 2)
        ok = ok and abs(mean - target) / target <= 0.30
    verdict("scale-shape", ok, f"means={offsets} vs 11/27/101 within 30%")


# --- criterion 8: incast reproduction ------------------------------------------------------

def test_incast_reproduction():
    session = RunSession(RunConfig(incident="single_link_datacenter_incast"))
    assert session.spec.workload.rho == pytest.approx(0.4)
    issue = session.spec.issues[0]
    session.start()  # injection arms the 20 s-interval incast at warmup end
    session.state.advance(1000)  # one full burst
    st = session.state.stats[(issue.dev, issue.comp)]
    buffer = session.state.find_link(issue.dev, issue.comp).buffer
    ok = st.queue_peak >= 0.9 * buffer and st.drops_queue > 0
    session.abort()
    session.finish()
    verdict("incast-reproduction", ok,
            f"queue_peak={st.queue_peak} (buffer {buffer}), drops_queue={st.drops_queue}")
