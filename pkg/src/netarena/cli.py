"""Human-facing command line: browse the benchmark, host runs, replay
artifacts, run the smoke matrix, and aggregate reports.

Exit codes: 0 ok, 1 usage error, 2 run aborted / smoke failure,
3 artifact integrity failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .aal import AccessPolicy
from .evaluator import SloConfig, aggregate, summary_csv
from .orchestrator import (
    IntegrityError,
    RunConfig,
    RunSession,
    describe,
    list_incidents,
    replay,
    smoke_matrix,
)


def _load_policy(path):
    if not path:
        return AccessPolicy()
    return AccessPolicy.from_dict(json.loads(Path(path).read_text()))


def _load_slo(path):
    if not path:
        return SloConfig()
    doc = json.loads(Path(path).read_text())
    return SloConfig(
        max_p95_latency_ms=doc.get("max_p95_latency_ms"),
        max_loss_fraction=doc.get("max_loss_fraction"),
    )


def cmd_list(args):
    for e in list_incidents():
        kind = "template" if e["template"] else f"{e['issues']} issue(s)"
        causes = ",".join(e["root_causes"]) or "-"
        print(f"{e['name']:44s} {e['scenario']:16s} {e['size']}  {kind:12s} {causes}")
    return 0


def cmd_describe(args):
    try:
        info = describe(args.name, reveal=args.reveal)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(info, sort_keys=True, indent=2))
    return 0


def cmd_run(args):
    config = RunConfig(
        incident=args.incident,
        policy=_load_policy(args.policy),
        out_dir=args.out,
        slo=_load_slo(args.slo),
        paced_ratio=args.paced,
        listen=args.listen,
        grace_s=args.grace,
        overwrite=args.overwrite,
    )
    try:
        session = RunSession(config)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    session.start()
    print(f"incident {session.spec.name}: agent phase open on {args.listen}", file=sys.stderr)
    if session.spec.horizon <= 0:
        session.abort()
    elif args.listen == "stdio":
        from .transport import serve_stdio

        serve_stdio(session)
        if session.phase == "agent_active":
            session.abort()
    elif args.listen.startswith("tcp:"):
        from .transport import serve_tcp

        serve_tcp(session, int(args.listen.split(":", 1)[1]), grace_s=args.grace)
    elif args.listen.startswith("http:"):
        import threading
        import time

        from .service import create_app

        import uvicorn

        app = create_app(session)
        server = uvicorn.Server(uvicorn.Config(app, host="127.0.0.1",
                                               port=int(args.listen.split(":", 1)[1]), log_level="warning"))
        thread = threading.Thread(target=server.run, daemon=True)
        thread.start()
        try:
            while session.phase == "agent_active":
                time.sleep(0.05)
                if args.grace is not None and time.time() - session.last_activity_wall > args.grace:
                    session.abort()
        finally:
            server.should_exit = True
            thread.join(timeout=5)
    else:
        print(f"error: unknown listen spec {args.listen!r}", file=sys.stderr)
        return 1
    report = session.finish()
    # stdout carries the protocol stream in stdio mode, so the report
    # goes to stderr there; artifacts always hold the canonical copy
    sink = sys.stderr if args.listen == "stdio" and session.gateway.records else sys.stdout
    print(report.to_json(), end="", file=sink)
    return 2 if report.aborted else 0


def cmd_replay(args):
    try:
        report = replay(args.dir)
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out = Path(args.dir) / "report.json"
    if out.exists() and not args.write:
        print(report.to_json(), end="")
    else:
        out.write_text(report.to_json())
        print(f"wrote {out}", file=sys.stderr)
    return 0


def cmd_smoke(args):
    rows = smoke_matrix()
    failures = 0
    for r in rows:
        mark = "PASS" if r["pass"] else "FAIL"
        if not r["pass"]:
            failures += 1
        print(f"{mark} {r['incident']:44s} {r['signal_detail']}")
    print(f"{len(rows) - failures}/{len(rows)} incidents pass")
    return 0 if failures == 0 else 2


def cmd_aggregate(args):
    reports = []
    for d in args.dirs:
        path = Path(d) / "report.json"
        if not path.exists():
            try:
                reports.append(replay(d))
                continue
            except (IntegrityError, FileNotFoundError) as exc:
                print(f"error: {d}: {exc}", file=sys.stderr)
                return 1
        reports.append(_report_from_json(json.loads(path.read_text())))
    rows = aggregate(reports)
    csv_text = summary_csv(rows)
    if args.csv:
        Path(args.csv).write_text(csv_text)
        print(f"wrote {args.csv}", file=sys.stderr)
    else:
        print(csv_text, end="")
    return 0


def _report_from_json(doc: dict):
    """Rehydrate just enough of a persisted report for aggregation."""
    from .evaluator import EfficiencyMetrics, EvaluationReport, GoalResult, Submission

    goals = {}
    for g, gd in doc.get("goals", {}).items():
        c = gd["confusion"]
        goals[g] = GoalResult(goal=g, exact_match=gd["exact_match"],
                              tp=c["tp"], fp=c["fp"], fn=c["fn"], tn=c["tn"])
    eff = doc.get("efficiency", {})
    efficiency = EfficiencyMetrics(
        time_to_submit_virtual_ms=eff.get("time_to_submit_virtual_ms", 0),
        wall_time_s=eff.get("wall_time_s", 0.0),
        tool_calls=eff.get("tool_calls", 0),
        tool_errors=eff.get("tool_errors", 0),
        denied_calls=eff.get("denied_calls", 0),
        agent_metadata=eff.get("agent_metadata", {}),
    )
    return EvaluationReport(
        incident=doc.get("incident", "?"),
        spec_hash=doc.get("spec_hash", ""),
        goals=goals,
        efficiency=efficiency,
        slo_violations=[],
        tool_histogram=doc.get("tool_histogram", {}),
        submission=Submission.from_payload(doc.get("submission", {})),
        aborted=doc.get("aborted", False),
    )


def build_parser():
    parser = argparse.ArgumentParser(prog="arena", description="network incident arena")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("list", help="list shipped incidents and templates")

    p = sub.add_parser("describe", help="show one incident's resolved spec")
    p.add_argument("name")
    p.add_argument("--reveal", action="store_true", help="include the ground truth")

    p = sub.add_parser("run", help="host one incident run for an agent")
    p.add_argument("--incident", required=True, help="shipped name or JSON path")
    p.add_argument("--policy", help="access policy JSON file")
    p.add_argument("--slo", help="SLO config JSON file")
    p.add_argument("--out", help="artifact directory")
    p.add_argument("--paced", type=float, default=None, metavar="R",
                   help="pace virtual time at R x wall clock (default: stepped)")
    p.add_argument("--listen", default="tcp:7777", help="tcp:PORT | stdio | http:PORT")
    p.add_argument("--grace", type=float, default=300.0, help="wall seconds of agent inactivity before abort")
    p.add_argument("--overwrite", action="store_true")

    p = sub.add_parser("replay", help="recompute evaluation from artifacts")
    p.add_argument("dir")
    p.add_argument("--write", action="store_true", help="rewrite report.json")

    sub.add_parser("smoke", help="run the full-suite smoke matrix")

    p = sub.add_parser("aggregate", help="summarize run reports")
    p.add_argument("dirs", nargs="+")
    p.add_argument("--csv", help="write CSV summary here")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "list": cmd_list,
        "describe": cmd_describe,
        "run": cmd_run,
        "replay": cmd_replay,
        "smoke": cmd_smoke,
        "aggregate": cmd_aggregate,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
