"""Thin client for the arena wire protocol.

Speaks newline-delimited JSON envelopes over TCP or a socket-like stream
pair, and the same payloads over HTTP POST /rpc. Keeps a complete local
transcript of (request, response) pairs; request ids are strictly
increasing. Standard library only: the SDK must work without the arena
installed."""

from __future__ import annotations

import json
import socket
import urllib.request


class ArenaError(Exception):
    """Protocol-level error; .code mirrors the server's error code
    (-32601 unknown method/tool, -32602 invalid params, 1001 policy
    denied, 1002 tool error, 1003 already submitted)."""

    def __init__(self, code: int, message: str):
        super().__init__(f"[{code}] {message}")
        self.code = code
        self.message = message


class _TcpTransport:
    def __init__(self, host: str, port: int, timeout: float = 30.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.fh = self.sock.makefile("rw", encoding="utf-8", newline="\n")

    def round_trip(self, envelope: dict) -> dict:
        self.fh.write(json.dumps(envelope) + "\n")
        self.fh.flush()
        line = self.fh.readline()
        if not line:
            raise ConnectionError("server closed the connection")
        return json.loads(line)

    def close(self):
        try:
            self.fh.close()
        finally:
            self.sock.close()


class _HttpTransport:
    def __init__(self, base_url: str, timeout: float = 30.0):
        self.url = base_url.rstrip("/") + "/rpc"
        self.timeout = timeout

    def round_trip(self, envelope: dict) -> dict:
        req = urllib.request.Request(
            self.url,
            data=json.dumps(envelope).encode(),
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            return json.loads(resp.read().decode())

    def close(self):
        pass


class _StreamTransport:
    """Pre-opened text streams (e.g. a spawned `arena run --listen stdio`)."""

    def __init__(self, reader, writer):
        self.reader = reader
        self.writer = writer

    def round_trip(self, envelope: dict) -> dict:
        self.writer.write(json.dumps(envelope) + "\n")
        self.writer.flush()
        line = self.reader.readline()
        if not line:
            raise ConnectionError("stream closed")
        return json.loads(line)

    def close(self):
        pass


def _open_transport(endpoint) -> object:
    if isinstance(endpoint, tuple):
        return _StreamTransport(*endpoint)
    if endpoint.startswith("tcp:"):
        _, host, port = endpoint.split(":")
        return _TcpTransport(host, int(port))
    if endpoint.startswith(("http://", "https://")):
        return _HttpTransport(endpoint)
    raise ValueError(f"unsupported endpoint {endpoint!r}; use tcp:HOST:PORT, http://..., or a stream pair")


class ArenaClient:
    """Issue tool calls against a running arena and record the transcript."""

    def __init__(self, endpoint):
        self.endpoint = endpoint
        self.transport = _open_transport(endpoint)
        self.next_id = 1
        self.transcript = []  # (request, response) in order

    def close(self):
        self.transport.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _send(self, method: str, params=None) -> dict:
        envelope = {"id": self.next_id, "method": method}
        if params is not None:
            envelope["params"] = params
        self.next_id += 1
        response = self.transport.round_trip(envelope)
        self.transcript.append((envelope, response))
        if "error" in response and response["error"] is not None:
            err = response["error"]
            raise ArenaError(err.get("code", 1002), err.get("message", "unknown error"))
        return response.get("result")

    def list_tools(self) -> list:
        return self._send("tools/list")["tools"]

    def call(self, name: str, arguments: dict = None) -> dict:
        """Invoke one tool; returns its output payload. Raises ArenaError
        on denial or tool failure."""
        result = self._send("tools/call", {"name": name, "arguments": arguments or {}})
        return result.get("output")

    def call_meta(self, name: str, arguments: dict = None) -> dict:
        """Like call(), but returns the full result wrapper including
        charged_ms and virtual_now."""
        return self._send("tools/call", {"name": name, "arguments": arguments or {}})

    def submit(self, payload: dict) -> dict:
        return self.call("submit", {"payload": payload})
