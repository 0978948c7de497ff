import json

from arena_agent_sdk.cli import main


def test_arena_baseline_entry_point(hosted_run, capsys):
    run = hosted_run("link_down_datacenter")
    assert main(["--endpoint", run.endpoint]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["detected"] is True
    assert payload["root_causes"] == ["link_down"]
    report = run.finish()
    assert all(r.exact_match for r in report.goals.values())


def test_arena_baseline_bad_endpoint():
    assert main(["--endpoint", "tcp:127.0.0.1:1"]) == 1
