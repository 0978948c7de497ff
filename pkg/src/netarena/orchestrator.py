"""Run lifecycle: instantiate a scenario, drive workload and injections,
serve the tool gateway, collect the submission, evaluate, and persist
replayable artifacts.

A run directory is self-contained: topology.json, incident.json,
events.jsonl, flows.jsonl, snapshots/, run.json, and report.json are
enough to re-derive the evaluation without re-running the agent.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from . import incident as incident_mod
from .aal import AccessPolicy, Gateway
from .evaluator import (
    EfficiencyMetrics,
    EvaluationReport,
    SloConfig,
    Submission,
    evaluate,
    spec_hash,
)
from .incident import IncidentSpec, derive_ground_truth, load_spec, schedule_injections
from .simcore import NetworkState
from .topology import entity_universe, topology_to_json

PHASES = ("init", "warmup", "agent_active", "submitted", "evaluated", "aborted")
DEFAULT_GRACE_S = 300.0

ERROR_CODES = {
    "unknown_method": -32601,
    "unknown_tool": -32601,
    "invalid_params": -32602,
    "denied": 1001,
    "runtime": 1002,
    "not_active": 1002,
    "already_submitted": 1003,
}


class IntegrityError(RuntimeError):
    pass


@dataclass
class RunConfig:
    incident: object  # benchmark name, file path, or a spec document dict
    policy: AccessPolicy = field(default_factory=AccessPolicy)
    out_dir: str = None
    slo: SloConfig = field(default_factory=lambda: SloConfig(max_p95_latency_ms=None, max_loss_fraction=None))
    paced_ratio: float = None  # None = stepped time (fully deterministic)
    listen: str = None  # "stdio" | "tcp:PORT" | "http:PORT" | None (in-process)
    grace_s: float = DEFAULT_GRACE_S
    seed_override: int = None
    overwrite: bool = False


def benchmark_dir():
    return resources.files("netarena") / "benchmark"


def resolve_incident_doc(ref) -> dict:
    """Accept a shipped incident name, a JSON file path, or a raw dict."""
    if isinstance(ref, dict):
        return json.loads(json.dumps(ref))
    path = Path(str(ref))
    if path.suffix == ".json" and path.exists():
        return json.loads(path.read_text())
    candidate = benchmark_dir() / f"{ref}.json"
    try:
        return json.loads(candidate.read_text())
    except (FileNotFoundError, OSError):
        raise FileNotFoundError(f"unknown incident {ref!r}: not a file and not in the shipped benchmark")


def load_incident(ref, seed_override=None) -> IncidentSpec:
    doc = resolve_incident_doc(ref)
    if seed_override is not None:
        doc["seed"] = int(seed_override)
    return load_spec(doc)


class RunSession:
    """One incident run: owns the simulator, the gateway, and the phase
    machine. All dispatching is serialized through one lock, satisfying
    the single-writer model."""

    def __init__(self, config: RunConfig):
        self.config = config
        seed_env = os.environ.get("ARENA_SEED")
        seed_override = config.seed_override
        if seed_override is None and seed_env:
            seed_override = int(seed_env)
        self.spec = load_incident(config.incident, seed_override=seed_override)
        self.spec_doc = incident_mod.spec_to_dict(self.spec)
        self.topo = self.spec.build_topology()
        self.universe = entity_universe(self.topo)
        self.truth = derive_ground_truth(self.spec, self.topo)
        self.state = NetworkState(self.topo)
        self.gateway = Gateway(self.state, config.policy, self.universe, on_submit=self._on_submit)
        self.gateway.active = False
        self.lock = threading.RLock()
        self.phase = "init"
        self.transitions = [("init", 0, time.time())]
        self.submission_payload = None
        self.submit_virtual_ms = None
        self.agent_start_ms = None
        self.agent_start_wall = None
        self.wall_time_s = 0.0
        self._snapshots = []
        self.state.snapshot_sink = self._snapshots.append
        self.last_activity_wall = time.time()

    # -- phases -------------------------------------------------------------------

    def _transition(self, phase: str):
        self.phase = phase
        self.transitions.append((phase, self.state.clock.now, time.time()))

    def start(self):
        """init -> warmup -> agent_active. Injections are scheduled at
        warmup + inject_at and fire as the clock passes them."""
        assert self.phase == "init"
        incident_mod.drive_workload(self.spec.workload, self.state, arm_at_ms=self.spec.warmup)
        schedule_injections(self.spec, self.state)
        self._transition("warmup")
        if self.spec.warmup > 0:
            self.state.advance(self.spec.warmup)
        else:
            self.state._fire_due_events()  # zero-warmup incidents inject immediately
        self._transition("agent_active")
        self.agent_start_ms = self.state.clock.now
        self.agent_start_wall = time.time()
        self.gateway.active = True

    @property
    def injection_ms(self) -> int:
        if self.truth.injection_times:
            return min(self.truth.injection_times)
        return self.spec.warmup

    def horizon_exhausted(self) -> bool:
        return self.state.clock.now - self.agent_start_ms >= self.spec.horizon

    def abort(self):
        """Horizon or grace exhaustion: the run ends with a synthetic
        empty submission, graded as a missed detection."""
        with self.lock:
            if self.phase in ("submitted", "evaluated", "aborted"):
                return
            self.gateway.active = False
            self.submission_payload = {"detected": False, "localization": [], "root_causes": [],
                                       "report_text": "", "agent_metadata": {}}
            self.submit_virtual_ms = self.state.clock.now
            self.wall_time_s = time.time() - (self.agent_start_wall or time.time())
            self._transition("aborted")

    def _on_submit(self, payload: dict):
        self.submission_payload = payload
        self.submit_virtual_ms = self.state.clock.now
        self.wall_time_s = time.time() - (self.agent_start_wall or time.time())
        self.gateway.active = False
        self._transition("submitted")

    # -- wire dispatch ---------------------------------------------------------------

    def dispatch(self, envelope: dict) -> dict:
        """Handle one wire envelope; always returns a response envelope."""
        env_id = envelope.get("id")
        method = envelope.get("method")
        with self.lock:
            self.last_activity_wall = time.time()
            if method == "tools/list":
                return {"id": env_id, "result": {"tools": self.gateway.list_tools()}}
            if method != "tools/call":
                return {"id": env_id, "error": {"code": -32601, "message": f"unknown method {method!r}"}}
            params = envelope.get("params") or {}
            name = params.get("name")
            args = params.get("arguments") or {}
            if self.phase == "agent_active" and self.horizon_exhausted():
                self.abort()
            record = self.gateway.call_tool(name, args, render=params.get("render"))
            if self.config.paced_ratio:
                time.sleep(record.charged_ms / 1000.0 / self.config.paced_ratio)
            if record.outcome == "ok":
                return {
                    "id": env_id,
                    "result": {
                        "output": record.result,
                        "charged_ms": record.charged_ms,
                        "virtual_now": self.state.clock.now,
                    },
                }
            if record.outcome == "denied":
                return {"id": env_id, "error": {"code": ERROR_CODES["denied"], "message": record.reason}}
            code = ERROR_CODES.get(record.error_kind, 1002)
            return {"id": env_id, "error": {"code": code, "message": record.reason}}

    # -- evaluation & artifacts --------------------------------------------------------

    def _efficiency(self) -> EfficiencyMetrics:
        records = self.gateway.records
        non_denied = [r for r in records if r.outcome != "denied"]
        submit_at = self.submit_virtual_ms if self.submit_virtual_ms is not None else self.state.clock.now
        meta = {}
        if self.submission_payload:
            meta = dict(self.submission_payload.get("agent_metadata", {}))
        return EfficiencyMetrics(
            time_to_submit_virtual_ms=max(0, submit_at - self.injection_ms),
            wall_time_s=round(self.wall_time_s, 3),
            tool_calls=len(non_denied),
            tool_errors=sum(1 for r in records if r.outcome == "tool_error"),
            denied_calls=sum(1 for r in records if r.outcome == "denied"),
            agent_metadata=meta,
        )

    def finish(self) -> EvaluationReport:
        """Grade the collected submission and persist run artifacts."""
        with self.lock:
            if self.phase == "agent_active":
                self.abort()
            aborted = self.phase == "aborted"
            sub = Submission.from_payload(self.submission_payload or {})
            windows = self.state.windows.flush()
            histogram = {}
            for r in self.gateway.records:
                histogram[r.tool or "?"] = histogram.get(r.tool or "?", 0) + 1
            report = evaluate(
                self.spec,
                self.truth,
                self.universe,
                sub,
                self._efficiency(),
                windows,
                self.config.slo,
                histogram,
                self.injection_ms,
                aborted=aborted,
            )
            if self.phase != "aborted":
                self._transition("evaluated")
            if self.config.out_dir:
                self.write_artifacts(report, windows)
            return report

    def write_artifacts(self, report: EvaluationReport, windows: list):
        out = Path(self.config.out_dir)
        if out.exists() and any(out.iterdir()) and not self.config.overwrite:
            raise IOError(f"output directory {out} is not empty (use overwrite)")
        (out / "snapshots").mkdir(parents=True, exist_ok=True)
        (out / "topology.json").write_text(topology_to_json(self.topo))
        (out / "incident.json").write_text(json.dumps(self.spec_doc, sort_keys=True, indent=2) + "\n")
        with (out / "events.jsonl").open("w") as fh:
            for r in self.gateway.records:
                fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
        with (out / "flows.jsonl").open("w") as fh:
            for w in windows:
                fh.write(json.dumps(w.to_dict(), sort_keys=True) + "\n")
        for snap in self._snapshots:
            (out / "snapshots" / f"{snap.id}.json").write_text(
                json.dumps(snap.payload, sort_keys=True, indent=2) + "\n"
            )
        run_meta = {
            "phases": [{"phase": p, "virtual_ms": v, "wall_ts": w} for p, v, w in self.transitions],
            "policy": {"nodes": self.config.policy.node_globs, "tools": self.config.policy.tool_globs},
            "slo": self.config.slo.to_dict(),
            "wall_time_s": round(self.wall_time_s, 3),
            "paced_ratio": self.config.paced_ratio,
        }
        (out / "run.json").write_text(json.dumps(run_meta, sort_keys=True, indent=2) + "\n")
        (out / "report.json").write_text(report.to_json())


def run_benchmark(config: RunConfig, agent=None) -> EvaluationReport:
    """Full lifecycle with an in-process agent: agent(session) may call
    session.dispatch(...) until it submits. Server transports live in
    netarena.transport / netarena.service."""
    session = RunSession(config)
    session.start()
    if session.spec.horizon <= 0:
        session.abort()
    elif agent is not None:
        agent(session)
    return session.finish()


# --- replay --------------------------------------------------------------------------

def read_events(path: Path) -> list:
    records = []
    with path.open() as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    for i, r in enumerate(records, start=1):
        if r.get("seq") != i:
            raise IntegrityError(f"events.jsonl: expected seq {i}, found {r.get('seq')}")
    return records


def replay(out_dir) -> EvaluationReport:
    """Recompute the evaluation from persisted artifacts. The result must
    equal the original report (report.json is derived, not authoritative)."""
    out = Path(out_dir)
    try:
        spec_doc = json.loads((out / "incident.json").read_text())
    except FileNotFoundError:
        raise IntegrityError(f"{out}: missing incident.json")
    spec = load_spec(spec_doc)
    topo = spec.build_topology()
    universe = entity_universe(topo)
    truth = derive_ground_truth(spec, topo)
    records = read_events(out / "events.jsonl")
    run_meta = json.loads((out / "run.json").read_text()) if (out / "run.json").exists() else {}
    windows = []
    flows_path = out / "flows.jsonl"
    if flows_path.exists():
        from .simcore import FlowWindow

        with flows_path.open() as fh:
            for line in fh:
                if line.strip():
                    windows.append(FlowWindow(**json.loads(line)))
    submit_rec = next((r for r in records if r["tool"] == "submit" and r["outcome"] == "ok"), None)
    phases = {p["phase"]: p for p in run_meta.get("phases", [])}
    aborted = "aborted" in phases
    if submit_rec is not None:
        payload = submit_rec["args"].get("payload", {})
        submit_virtual = phases.get("submitted", {}).get("virtual_ms", submit_rec["virtual_ts"])
    else:
        payload = {"detected": False, "localization": [], "root_causes": []}
        submit_virtual = phases.get("aborted", {}).get("virtual_ms", 0)
        aborted = True
    injection_ms = min(truth.injection_times) if truth.injection_times else spec.warmup
    sub = Submission.from_payload(payload)
    non_denied = [r for r in records if r["outcome"] != "denied"]
    efficiency = EfficiencyMetrics(
        time_to_submit_virtual_ms=max(0, submit_virtual - injection_ms),
        wall_time_s=run_meta.get("wall_time_s", 0.0),
        tool_calls=len(non_denied),
        tool_errors=sum(1 for r in records if r["outcome"] == "tool_error"),
        denied_calls=sum(1 for r in records if r["outcome"] == "denied"),
        agent_metadata=dict(payload.get("agent_metadata", {})),
    )
    histogram = {}
    for r in records:
        histogram[r["tool"] or "?"] = histogram.get(r["tool"] or "?", 0) + 1
    slo_doc = run_meta.get("slo", {})
    slo = SloConfig(max_p95_latency_ms=slo_doc.get("max_p95_latency_ms"),
                    max_loss_fraction=slo_doc.get("max_loss_fraction"))
    return evaluate(spec, truth, universe, sub, efficiency, windows, slo, histogram,
                    injection_ms, aborted=aborted)


# --- catalog -----------------------------------------------------------------------------

def list_incidents() -> list:
    """Shipped benchmark entries: incidents plus parametric templates."""
    entries = []
    for item in sorted(benchmark_dir().iterdir(), key=lambda p: p.name):
        if not item.name.endswith(".json"):
            continue
        doc = json.loads(item.read_text())
        is_template = _is_template(doc)
        entries.append({
            "name": doc.get("name", item.name[:-5]),
            "file": item.name,
            "scenario": doc.get("scenario", {}).get("kind"),
            "size": doc.get("scenario", {}).get("size"),
            "goals": doc.get("goals", []),
            "root_causes": sorted({i.get("root_cause") for i in doc.get("issues", [])}),
            "issues": len(doc.get("issues", [])),
            "template": is_template,
        })
    return entries


def _is_template(doc: dict) -> bool:
    def has_slot(v):
        if isinstance(v, str):
            return v.startswith("$")
        if isinstance(v, dict):
            return any(has_slot(x) for x in v.values())
        if isinstance(v, list):
            return any(has_slot(x) for x in v)
        return False

    return has_slot(doc.get("issues", []))


def describe(name: str, reveal: bool = False) -> dict:
    doc = resolve_incident_doc(name)
    if _is_template(doc):
        return {"spec": doc, "template": True}
    spec = load_spec(doc)
    out = {"spec": incident_mod.spec_to_dict(spec), "template": False,
           "spec_hash": spec_hash(incident_mod.spec_to_dict(spec))}
    if reveal:
        topo = spec.build_topology()
        truth = derive_ground_truth(spec, topo)
        universe = entity_universe(topo)
        body = truth.to_dict()
        body["universe_size"] = len(universe)
        mask = truth.entity_mask(universe)
        body["entity_mask_indices"] = [i for i, bit in enumerate(mask) if bit]
        out["ground_truth"] = body
    else:
        out["ground_truth"] = "redacted (pass --reveal)"
    return out


# --- smoke matrix -------------------------------------------------------------------------

SMOKE_WINDOW_MS = 10000


def smoke_matrix() -> list:
    """For every shipped (non-template) incident: instantiate, warm up,
    inject, check the cause's liveness signal inside 10 s of virtual time,
    and grade a ground-truth-copied submission. Also flags catalog causes
    that ship no incident."""
    rows = []
    shipped_causes = set()
    for entry in list_incidents():
        if entry["template"]:
            continue
        name = entry["name"]
        spec = load_incident(entry["file"].removesuffix(".json"))
        shipped_causes.update(c for c in entry["root_causes"] if c)
        session = RunSession(RunConfig(incident=resolve_incident_doc(entry["file"].removesuffix(".json"))))
        session.start()
        session.state.advance(SMOKE_WINDOW_MS)
        ok = True
        details = []
        for issue in session.spec.issues:
            sig_ok, detail = incident_mod.check_signal(issue, session.state)
            details.append(f"{issue.root_cause}: {detail}")
            ok = ok and sig_ok
        payload = {
            "detected": session.truth.detected_expected,
            "localization": [list(e) for e in session.truth.entities],
            "root_causes": sorted(session.truth.cause_set),
            "report_text": "ground-truth copy",
        }
        rec = session.gateway.call_tool("submit", {"payload": payload})
        graded_ok = rec.outcome == "ok"
        report = session.finish()
        exact = all(r.exact_match for r in report.goals.values())
        rows.append({
            "incident": name,
            "signal_ok": ok,
            "signal_detail": "; ".join(details) or "control (no issues)",
            "graded_exact": graded_ok and exact,
            "pass": ok and graded_ok and exact,
        })
    for cause in incident_mod.ROOT_CAUSES:
        if cause not in shipped_causes:
            rows.append({
                "incident": f"<{cause}>",
                "signal_ok": False,
                "signal_detail": "missing incident",
                "graded_exact": False,
                "pass": False,
            })
    return rows
