#!/usr/bin/env python3
"""Regenerate the shipped benchmark suite (src/netarena/benchmark/).

One single-issue incident per root cause on a typical scenario, healthy
controls, one composite incident, and one parametric template per cause.
Every generated incident is verified end to end (load, warm up, inject,
liveness signal) before it is written.
"""

import json
import sys
from pathlib import Path

from netarena import incident as inc
from netarena.incident import DEFAULT_HORIZON_MS, DEFAULT_WARMUP_MS, eligible_entities, load_spec
from netarena.orchestrator import RunConfig, RunSession
from netarena.topology import build_scenario

OUT = Path(__file__).resolve().parent.parent / "src" / "netarena" / "benchmark"

# cause -> (scenario, size, pool index) ; spread across the four scenarios
PLACEMENT = {
    "link_down": ("datacenter_clos", "S", 0),
    "link_detached": ("datacenter_clos", "S", 5),
    "link_flap": ("campus_3tier", "S", 2),
    "faulty_cable": ("datacenter_clos", "S", 0),
    "mtu_fragmentation_disabled": ("campus_3tier", "S", 0),
    "host_crash": ("datacenter_clos", "S", 6),
    "switch_crash": ("cloud_pop_fabric", "S", 2),
    "host_ip_misconfig": ("datacenter_clos", "S", 3),
    "incorrect_netmask": ("datacenter_clos", "S", 1),
    "ospf_area_mismatch": ("isp_mesh", "S", 1),
    "static_blackhole": ("isp_mesh", "S", 0),
    "fwd_entry_misconfig": ("datacenter_clos", "S", 1),
    "forwarding_loop": ("datacenter_clos", "S", 0),
    "icmp_acl_block": ("campus_3tier", "S", 1),
    "http_acl_block": ("cloud_pop_fabric", "S", 0),
    "incast_traffic": ("datacenter_clos", "S", 0),
    "microburst": ("cloud_pop_fabric", "S", 0),
    "dos_flood": ("campus_3tier", "S", 0),
}

SHORT = {
    "datacenter_clos": "datacenter",
    "campus_3tier": "campus",
    "isp_mesh": "isp",
    "cloud_pop_fabric": "cloudpop",
}


def incident_doc(name, scenario, size, issues, rho=0.4):
    return {
        "name": name,
        "scenario": {"kind": scenario, "size": size},
        "seed": 0,
        "warmup_ms": DEFAULT_WARMUP_MS,
        "horizon_ms": DEFAULT_HORIZON_MS,
        "goals": ["detect", "localize", "rca"],
        "issues": issues,
        "workload": {"regular": {"pattern": "uniform_all_pairs", "rho": rho}, "triggering": None},
    }


def verify(doc):
    spec = load_spec(doc)
    session = RunSession(RunConfig(incident=doc))
    session.start()
    session.state.advance(10000)
    for issue in session.spec.issues:
        ok, detail = inc.check_signal(issue, session.state)
        if not ok:
            raise SystemExit(f"{doc['name']}: no liveness signal for {issue.root_cause}: {detail}")
    return spec


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for old in OUT.glob("*.json"):
        old.unlink()
    docs = []
    for cause, (scenario, size, idx) in PLACEMENT.items():
        topo = build_scenario(scenario, size, 0)
        pool = eligible_entities(cause, topo)
        dev, comp, params = pool[min(idx, len(pool) - 1)]
        if cause == "incast_traffic":
            name = "single_link_datacenter_incast"
        else:
            name = f"{cause}_{SHORT[scenario]}"
        issues = [{"dev": dev, "comp": comp, "root_cause": cause, "params": params, "inject_at_ms": 0}]
        docs.append(incident_doc(name, scenario, size, issues))
    docs.append(incident_doc("healthy_datacenter_control", "datacenter_clos", "S", []))
    docs.append(incident_doc("healthy_campus_control", "campus_3tier", "S", []))

    # composite: a hard link failure plus an unrelated ACL block
    topo = build_scenario("datacenter_clos", "S", 0)
    link_pool = eligible_entities("link_down", topo)
    acl_pool = eligible_entities("icmp_acl_block", topo)
    dev1, comp1, _ = link_pool[7 % len(link_pool)]
    acl_dev = next((d for d, c, p in acl_pool if d != dev1), acl_pool[0][0])
    docs.append(
        incident_doc(
            "composite_linkdown_icmpacl_datacenter",
            "datacenter_clos",
            "S",
            [
                {"dev": dev1, "comp": comp1, "root_cause": "link_down", "params": {}, "inject_at_ms": 0},
                {"dev": acl_dev, "comp": "acl", "root_cause": "icmp_acl_block", "params": {}, "inject_at_ms": 0},
            ],
        )
    )

    for doc in docs:
        if doc["issues"]:
            verify(doc)
        else:
            load_spec(doc)
        path = OUT / f"{doc['name']}.json"
        path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
        print(f"wrote {path.name}")

    # templates: same shape with positional slots for dev/comp
    for cause, (scenario, size, _) in PLACEMENT.items():
        params = {}
        if cause == "ospf_area_mismatch":
            params = {"interface": "$3"}
        elif cause in ("static_blackhole", "fwd_entry_misconfig"):
            params = {"victim": "$3"}
        elif cause == "forwarding_loop":
            params = {"victim": "$3", "peer": "$4"}
        doc = incident_doc(
            f"template_{cause}",
            scenario,
            size,
            [{"dev": "$1", "comp": "$2", "root_cause": cause, "params": params, "inject_at_ms": 0}],
        )
        path = OUT / f"{doc['name']}.json"
        path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
        print(f"wrote {path.name}")
    print(f"{len(list(OUT.glob('*.json')))} files")


if __name__ == "__main__":
    sys.exit(main())
