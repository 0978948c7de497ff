"""Newline-delimited JSON transports for the tool wire protocol.

Requests are `{"id": n, "method": "tools/list"}` or
`{"id": n, "method": "tools/call", "params": {"name": t, "arguments": {...}}}`;
responses carry either `result` or `error: {code, message}`. The same
payloads are served over HTTP POST /rpc by netarena.service.
"""

from __future__ import annotations

import json
import socketserver
import sys
import threading
import time


def handle_line(session, line: str) -> str:
    """One NDJSON request in, one NDJSON response out."""
    try:
        envelope = json.loads(line)
        if not isinstance(envelope, dict):
            raise ValueError("not an object")
    except ValueError as exc:
        return json.dumps({"id": None, "error": {"code": -32600, "message": f"malformed request: {exc}"}})
    response = session.dispatch(envelope)
    return json.dumps(response, sort_keys=True)


def serve_stdio(session, stdin=None, stdout=None, done=None):
    """Serve the protocol over standard streams until submit/EOF."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        stdout.write(handle_line(session, line) + "\n")
        stdout.flush()
        if session.phase in ("submitted", "aborted"):
            break
        if done is not None and done():
            break


class _LineHandler(socketserver.StreamRequestHandler):
    # keeps answering until the client hangs up, so post-submit calls
    # still receive their "already submitted" errors
    def handle(self):
        session = self.server.session
        while True:
            line = self.rfile.readline()
            if not line:
                return
            line = line.strip().decode("utf-8", errors="replace")
            if not line:
                continue
            try:
                out = handle_line(session, line) + "\n"
                self.wfile.write(out.encode())
            except (BrokenPipeError, ConnectionResetError):
                return


class TcpServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, session, port: int, host: str = "127.0.0.1"):
        super().__init__((host, port), _LineHandler)
        self.session = session


def serve_tcp(session, port: int, grace_s: float = None) -> None:
    """Accept agent connections until a submission lands, the horizon is
    exhausted, or nothing has happened for grace_s wall seconds."""
    server = TcpServer(session, port)
    thread = threading.Thread(target=server.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True)
    thread.start()
    try:
        while session.phase == "agent_active":
            time.sleep(0.05)
            if grace_s is not None and time.time() - session.last_activity_wall > grace_s:
                session.abort()
                break
    finally:
        server.shutdown()
        server.server_close()
