"""FastAPI front-end wrapping one live run.

POST /rpc speaks the same envelope as the socket/stdio transports, so
HTTP tool-calling clients need no adapter. Catalog endpoints let humans
browse the shipped benchmark while a run is serving.
"""

from __future__ import annotations

from typing import Any, Optional

from fastapi import FastAPI
from pydantic import BaseModel, Field

from . import orchestrator


class RpcParams(BaseModel):
    name: Optional[str] = None
    arguments: dict = Field(default_factory=dict)
    render: Optional[str] = None


class RpcRequest(BaseModel):
    id: Optional[int] = None
    method: str
    params: Optional[RpcParams] = None


class RpcError(BaseModel):
    code: int
    message: str


class RpcResponse(BaseModel):
    id: Optional[int] = None
    result: Optional[Any] = None
    error: Optional[RpcError] = None

    model_config = {"json_schema_extra": {"description": "exactly one of result/error is set"}}


class RunStatus(BaseModel):
    incident: str
    phase: str
    virtual_now_ms: int
    records: int
    submitted: bool


def create_app(session) -> FastAPI:
    """Wrap a RunSession; dispatching stays serialized on the session lock."""
    app = FastAPI(title="network incident arena", version="0.1.0")
    app.state.session = session

    @app.post("/rpc", response_model=RpcResponse, response_model_exclude_none=True)
    def rpc(req: RpcRequest) -> RpcResponse:
        envelope = {"id": req.id, "method": req.method}
        if req.params is not None:
            envelope["params"] = {"name": req.params.name, "arguments": req.params.arguments,
                                  "render": req.params.render}
        out = session.dispatch(envelope)
        if "error" in out:
            return RpcResponse(id=out.get("id"), error=RpcError(**out["error"]))
        return RpcResponse(id=out.get("id"), result=out.get("result"))

    @app.get("/status", response_model=RunStatus)
    def status() -> RunStatus:
        return RunStatus(
            incident=session.spec.name,
            phase=session.phase,
            virtual_now_ms=session.state.clock.now,
            records=len(session.gateway.records),
            submitted=session.gateway.submitted,
        )

    @app.get("/incidents")
    def incidents():
        return orchestrator.list_incidents()

    @app.get("/incidents/{name}")
    def incident_detail(name: str):
        try:
            return orchestrator.describe(name)
        except FileNotFoundError:
            return {"error": f"unknown incident {name!r}"}

    return app


def serve_http(session, port: int, host: str = "127.0.0.1"):
    import uvicorn

    uvicorn.run(create_app(session), host=host, port=port, log_level="warning")
