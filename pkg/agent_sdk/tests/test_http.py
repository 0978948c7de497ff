"""End-to-end over real HTTP: uvicorn serving the arena's /rpc."""

import threading
import time

import pytest

from arena_agent_sdk import ArenaClient, BaselineAgent


@pytest.fixture()
def http_endpoint():
    import uvicorn

    from netarena.orchestrator import RunConfig, RunSession
    from netarena.service import create_app

    session = RunSession(RunConfig(incident="ospf_area_mismatch_isp"))
    session.start()
    server = uvicorn.Server(uvicorn.Config(create_app(session), host="127.0.0.1", port=0, log_level="error"))
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 10
    while not server.started:
        if time.time() > deadline:
            raise RuntimeError("uvicorn did not start")
        time.sleep(0.02)
    port = server.servers[0].sockets[0].getsockname()[1]
    yield f"http://127.0.0.1:{port}", session
    server.should_exit = True
    thread.join(timeout=5)
    if session.phase == "agent_active":
        session.abort()
    session.finish()


def test_baseline_over_http(http_endpoint):
    endpoint, session = http_endpoint
    with ArenaClient(endpoint) as client:
        assert len(client.list_tools()) == 14
        payload = BaselineAgent(client).diagnose()
    assert payload["root_causes"] == ["ospf_area_mismatch"]
    assert session.gateway.submitted
