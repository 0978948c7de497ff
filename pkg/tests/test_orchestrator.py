import json
import socket
import threading
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from netarena.aal import AccessPolicy
from netarena.evaluator import SloConfig
from netarena.orchestrator import (
    IntegrityError,
    RunConfig,
    RunSession,
    describe,
    list_incidents,
    replay,
    run_benchmark,
)
from netarena.service import create_app
from netarena.transport import TcpServer, handle_line


def scrub(obj):
    """Drop wall-clock fields so deterministic content can be compared."""
    if isinstance(obj, dict):
        return {k: scrub(v) for k, v in obj.items() if not k.startswith("wall")}
    if isinstance(obj, list):
        return [scrub(v) for v in obj]
    return obj


def transcript_agent(calls):
    def agent(session):
        for i, (name, args) in enumerate(calls):
            session.dispatch({"id": i + 1, "method": "tools/call", "params": {"name": name, "arguments": args}})
    return agent


def gt_submit_payload(session):
    return {
        "detected": session.truth.detected_expected,
        "localization": [list(e) for e in session.truth.entities],
        "root_causes": sorted(session.truth.cause_set),
        "report_text": "copied",
        "agent_metadata": {"model": "transcript"},
    }


class GroundTruthCopier:
    """Plays a fixed probe transcript, then submits the ground truth."""

    def __init__(self, extra_calls=()):
        self.extra = list(extra_calls)

    def __call__(self, session):
        calls = [
            ("list_nodes", {}),
            ("get_reachability", {}),
            ("get_logs", {"node": sorted(n.id for n in session.topo.nodes if n.kind != "host")[0]}),
            ("wait", {"ms": 500}),
        ] + self.extra
        for i, (name, args) in enumerate(calls):
            session.dispatch({"id": i + 1, "method": "tools/call", "params": {"name": name, "arguments": args}})
        session.dispatch({
            "id": 99,
            "method": "tools/call",
            "params": {"name": "submit", "arguments": {"payload": gt_submit_payload(session)}},
        })


def test_list_incidents_counts():
    entries = list_incidents()
    incidents = [e for e in entries if not e["template"]]
    templates = [e for e in entries if e["template"]]
    assert len(incidents) >= 18 + 2  # every cause plus healthy controls
    assert len(templates) >= 18
    causes = {c for e in incidents for c in e["root_causes"]}
    from netarena.incident import ROOT_CAUSES

    assert causes == set(ROOT_CAUSES)


def test_describe_unknown_incident():
    with pytest.raises(FileNotFoundError):
        describe("no_such_incident")


def test_describe_redacts_ground_truth():
    plain = describe("link_down_datacenter")
    assert plain["ground_truth"] == "redacted (pass --reveal)"
    revealed = describe("link_down_datacenter", reveal=True)
    assert revealed["ground_truth"]["entities"] == [["pod0.leaf0", "eth0"]]


def test_run_lifecycle_with_ground_truth_copier(tmp_path):
    cfg = RunConfig(incident="link_down_datacenter", out_dir=str(tmp_path / "run"),
                    slo=SloConfig(max_loss_fraction=0.5))
    report = run_benchmark(cfg, GroundTruthCopier())
    assert all(r.exact_match for r in report.goals.values())
    assert not report.aborted
    assert report.efficiency.tool_calls == 5  # four probes plus submit
    # the fabric reroutes around a redundant leaf-spine link: no loss SLO
    assert not any(v.metric == "loss_fraction" for v in report.slo_violations)


def test_host_link_failure_breaks_slo(tmp_path):
    # downing a host's only uplink kills its background flows outright
    doc = json.loads((Path(__file__).parent.parent / "src/netarena/benchmark/link_down_datacenter.json").read_text())
    doc["issues"][0]["comp"] = "eth2"  # pod0.leaf0 port facing pod0.h0
    cfg = RunConfig(incident=doc, slo=SloConfig(max_loss_fraction=0.5))
    report = run_benchmark(cfg, GroundTruthCopier(extra_calls=[("wait", {"ms": 3000})]))
    assert any(v.metric == "loss_fraction" for v in report.slo_violations)


def test_zero_horizon_aborts_as_missed_detection(tmp_path):
    doc = json.loads((Path(__file__).parent.parent / "src/netarena/benchmark/link_down_datacenter.json").read_text())
    doc["horizon_ms"] = 0
    report = run_benchmark(RunConfig(incident=doc))
    assert report.aborted
    assert report.goals["detect"].exact_match is False


def test_phase_gating_before_and_after():
    session = RunSession(RunConfig(incident="link_down_datacenter"))
    out = session.dispatch({"id": 1, "method": "tools/call", "params": {"name": "ping", "arguments": {"src": "pod0.h0", "dst": "pod0.h1"}}})
    assert out["error"]["code"] == 1002  # not active yet
    session.start()
    ok = session.dispatch({"id": 2, "method": "tools/call", "params": {"name": "list_nodes", "arguments": {}}})
    assert "result" in ok
    session.dispatch({"id": 3, "method": "tools/call",
                      "params": {"name": "submit", "arguments": {"payload": gt_submit_payload(session)}}})
    after = session.dispatch({"id": 4, "method": "tools/call", "params": {"name": "list_nodes", "arguments": {}}})
    assert after["error"]["code"] == 1003
    session.finish()


def test_unknown_method_code():
    session = RunSession(RunConfig(incident="healthy_datacenter_control"))
    session.start()
    out = session.dispatch({"id": 1, "method": "resources/read"})
    assert out["error"]["code"] == -32601
    session.finish()


def test_determinism_same_transcript_byte_identical(tmp_path):
    outs = []
    for run_idx in (0, 1):
        out = tmp_path / f"r{run_idx}"
        cfg = RunConfig(incident="link_flap_campus", out_dir=str(out))
        run_benchmark(cfg, GroundTruthCopier(extra_calls=[("wait", {"ms": 2000}), ("get_logs", {"node": "dist.d0"})]))
        outs.append(out)
    for name in ("events.jsonl", "report.json", "flows.jsonl", "incident.json", "topology.json"):
        a = [scrub(json.loads(l)) for l in (outs[0] / name).read_text().splitlines() if l.strip()] \
            if name.endswith("jsonl") else scrub(json.loads((outs[0] / name).read_text()))
        b = [scrub(json.loads(l)) for l in (outs[1] / name).read_text().splitlines() if l.strip()] \
            if name.endswith("jsonl") else scrub(json.loads((outs[1] / name).read_text()))
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True), name


def test_snapshots_match_ok_records(tmp_path):
    out = tmp_path / "run"
    run_benchmark(RunConfig(incident="link_down_datacenter", out_dir=str(out)), GroundTruthCopier())
    records = [json.loads(l) for l in (out / "events.jsonl").read_text().splitlines() if l.strip()]
    want = {r["snapshot_id"] for r in records if r["outcome"] == "ok"}
    have = {p.stem for p in (out / "snapshots").glob("*.json")}
    assert want == have and want


def test_run_phases_strictly_ordered(tmp_path):
    out = tmp_path / "run"
    run_benchmark(RunConfig(incident="link_down_datacenter", out_dir=str(out)), GroundTruthCopier())
    meta = json.loads((out / "run.json").read_text())
    order = {"init": 0, "warmup": 1, "agent_active": 2, "submitted": 3, "evaluated": 4, "aborted": 5}
    ranks = [order[p["phase"]] for p in meta["phases"]]
    assert ranks == sorted(ranks)
    virtuals = [p["virtual_ms"] for p in meta["phases"]]
    assert virtuals == sorted(virtuals)


def test_replay_reproduces_report(tmp_path):
    out = tmp_path / "run"
    cfg = RunConfig(incident="static_blackhole_isp", out_dir=str(out))
    original = run_benchmark(cfg, GroundTruthCopier())
    again = replay(out)
    assert again.to_dict() == original.to_dict()


def test_replay_regenerates_missing_report(tmp_path):
    out = tmp_path / "run"
    cfg = RunConfig(incident="static_blackhole_isp", out_dir=str(out))
    original = run_benchmark(cfg, GroundTruthCopier())
    (out / "report.json").unlink()
    again = replay(out)
    assert again.to_json() == original.to_json()


def test_replay_detects_tampered_events(tmp_path):
    out = tmp_path / "run"
    cfg = RunConfig(incident="static_blackhole_isp", out_dir=str(out))
    run_benchmark(cfg, GroundTruthCopier())
    lines = (out / "events.jsonl").read_text().splitlines()
    (out / "events.jsonl").write_text("\n".join(lines[:2] + lines[3:]) + "\n")
    with pytest.raises(IntegrityError):
        replay(out)


def test_injections_fire_only_when_scheduled():
    doc = json.loads((Path(__file__).parent.parent / "src/netarena/benchmark/link_down_datacenter.json").read_text())
    doc["issues"][0]["inject_at_ms"] = 3000
    session = RunSession(RunConfig(incident=doc))
    session.start()
    assert session.state.find_link("pod0.leaf0", "eth0").state == "up"
    session.dispatch({"id": 1, "method": "tools/call", "params": {"name": "wait", "arguments": {"ms": 2990}}})
    assert session.state.find_link("pod0.leaf0", "eth0").state == "up"
    session.dispatch({"id": 2, "method": "tools/call", "params": {"name": "wait", "arguments": {"ms": 10}}})
    assert session.state.find_link("pod0.leaf0", "eth0").state == "down"
    session.abort()
    session.finish()


def test_zero_warmup_injects_at_start():
    doc = json.loads((Path(__file__).parent.parent / "src/netarena/benchmark/link_down_datacenter.json").read_text())
    doc["warmup_ms"] = 0
    session = RunSession(RunConfig(incident=doc))
    session.start()
    assert session.state.find_link("pod0.leaf0", "eth0").state == "down"
    session.abort()
    session.finish()


def test_horizon_exhaustion_mid_run():
    doc = json.loads((Path(__file__).parent.parent / "src/netarena/benchmark/link_down_datacenter.json").read_text())
    doc["horizon_ms"] = 1000
    session = RunSession(RunConfig(incident=doc))
    session.start()
    session.dispatch({"id": 1, "method": "tools/call", "params": {"name": "wait", "arguments": {"ms": 1500}}})
    out = session.dispatch({"id": 2, "method": "tools/call", "params": {"name": "list_nodes", "arguments": {}}})
    assert "error" in out
    report = session.finish()
    assert report.aborted


# --- wire transports ---------------------------------------------------------------

def test_arena_seed_env_override(monkeypatch):
    monkeypatch.setenv("ARENA_SEED", "17")
    session = RunSession(RunConfig(incident="link_down_datacenter"))
    assert session.spec.seed == 17
    monkeypatch.delenv("ARENA_SEED")
    session2 = RunSession(RunConfig(incident="link_down_datacenter"))
    assert session2.spec.seed == 0


def test_paced_mode_sleeps_proportionally():
    import time as _time

    session = RunSession(RunConfig(incident="healthy_datacenter_control", paced_ratio=1e7))
    session.start()
    t0 = _time.time()
    session.dispatch({"id": 1, "method": "tools/call", "params": {"name": "wait", "arguments": {"ms": 1000}}})
    assert _time.time() - t0 < 1.0  # 1 s of virtual time at 1e7x pacing
    session.abort()
    session.finish()


def test_silent_agent_hits_grace_timeout():
    from netarena.transport import serve_tcp

    session = RunSession(RunConfig(incident="healthy_datacenter_control"))
    session.start()
    serve_tcp(session, 0, grace_s=0.2)  # nobody connects
    report = session.finish()
    assert report.aborted


def test_handle_line_round_trip():
    session = RunSession(RunConfig(incident="healthy_datacenter_control"))
    session.start()
    out = json.loads(handle_line(session, json.dumps({"id": 1, "method": "tools/list"})))
    assert len(out["result"]["tools"]) == 14
    out = json.loads(handle_line(session, "this is not json"))
    assert out["error"]["code"] == -32600
    session.abort()
    session.finish()


def test_tcp_server_round_trip():
    session = RunSession(RunConfig(incident="healthy_datacenter_control"))
    session.start()
    server = TcpServer(session, 0)
    port = server.server_address[1]
    thread = threading.Thread(target=server.serve_forever, kwargs={"poll_interval": 0.02}, daemon=True)
    thread.start()
    try:
        with socket.create_connection(("127.0.0.1", port), timeout=5) as sock:
            fh = sock.makefile("rw")
            fh.write(json.dumps({"id": 1, "method": "tools/call",
                                 "params": {"name": "get_reachability", "arguments": {}}}) + "\n")
            fh.flush()
            resp = json.loads(fh.readline())
            assert resp["result"]["output"]["unreachable_pairs"] == []
    finally:
        server.shutdown()
        server.server_close()
    session.abort()
    session.finish()


# --- FastAPI service ------------------------------------------------------------------

@pytest.fixture()
def http_client():
    session = RunSession(RunConfig(incident="icmp_acl_block_campus",
                                   policy=AccessPolicy(node_globs=["dist.*", "core.*"])))
    session.start()
    client = TestClient(create_app(session))
    yield client, session
    if session.phase == "agent_active":
        session.abort()
    session.finish()


def test_http_rpc_tools_list(http_client):
    client, _ = http_client
    resp = client.post("/rpc", json={"id": 1, "method": "tools/list"})
    assert resp.status_code == 200
    assert len(resp.json()["result"]["tools"]) == 14


def test_http_rpc_call_and_status(http_client):
    client, session = http_client
    resp = client.post("/rpc", json={"id": 2, "method": "tools/call",
                                     "params": {"name": "list_nodes", "arguments": {}}})
    body = resp.json()
    assert body["id"] == 2 and "result" in body
    status = client.get("/status").json()
    assert status["phase"] == "agent_active" and status["records"] == 1


def test_http_rpc_denied_code(http_client):
    client, _ = http_client
    resp = client.post("/rpc", json={"id": 3, "method": "tools/call",
                                     "params": {"name": "get_logs", "arguments": {"node": "acc0.sw"}}})
    assert resp.json()["error"]["code"] == 1001


def test_http_incident_catalog(http_client):
    client, _ = http_client
    listed = client.get("/incidents").json()
    assert any(e["name"] == "single_link_datacenter_incast" for e in listed)
    detail = client.get("/incidents/link_down_datacenter").json()
    assert detail["ground_truth"] == "redacted (pass --reveal)"
