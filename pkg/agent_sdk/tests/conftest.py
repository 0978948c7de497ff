"""Test harness: hosts real arena runs behind the TCP wire endpoint.

The SDK itself never imports the arena; these fixtures do, purely to
stand up a live server for the client to talk to."""

import threading

import pytest

from netarena.orchestrator import RunConfig, RunSession
from netarena.transport import TcpServer


class HostedRun:
    def __init__(self, incident, policy=None):
        from netarena.aal import AccessPolicy

        self.session = RunSession(RunConfig(incident=incident, policy=policy or AccessPolicy()))
        self.session.start()
        self.server = TcpServer(self.session, 0)
        self.port = self.server.server_address[1]
        self.endpoint = f"tcp:127.0.0.1:{self.port}"
        self.thread = threading.Thread(target=self.server.serve_forever,
                                       kwargs={"poll_interval": 0.02}, daemon=True)
        self.thread.start()

    def finish(self):
        self.server.shutdown()
        self.server.server_close()
        if self.session.phase == "agent_active":
            self.session.abort()
        return self.session.finish()


@pytest.fixture()
def hosted_run():
    active = []

    def factory(incident, policy=None):
        run = HostedRun(incident, policy=policy)
        active.append(run)
        return run

    yield factory
    for run in active:
        if run.session.phase not in ("evaluated", "aborted") or run.thread.is_alive():
            try:
                run.finish()
            except Exception:
                pass
