"""Adapter seam for model-backed agents.

The adapter receives the tool list plus call/submit functions and drives
its own reason-act loop; the harness enforces the call budget and the
submit-exactly-once contract, so a misbehaving adapter still yields a
gradable run."""

from __future__ import annotations

from .client import ArenaClient
from .prompts import DIAGNOSIS_PROMPT, SUBMISSION_PROMPT

EMPTY_SUBMISSION = {
    "detected": False,
    "localization": [],
    "root_causes": [],
    "report_text": "no submission produced",
    "agent_metadata": {},
}


class BudgetExhausted(Exception):
    pass


def run_llm_agent(client: ArenaClient, adapter, budget: int = 60,
                  system_prompt: str = DIAGNOSIS_PROMPT,
                  submission_prompt: str = SUBMISSION_PROMPT) -> dict:
    """Drive one agent run: adapter(tools, call, submit, prompts) issues
    tool calls until it submits or the budget runs out. Returns the
    payload that was actually submitted."""
    state = {"calls": 0, "submitted": None}
    tools = client.list_tools()

    def call(name, arguments=None):
        if state["submitted"] is not None:
            raise BudgetExhausted("already submitted")
        if state["calls"] >= budget:
            raise BudgetExhausted(f"budget of {budget} calls exhausted")
        state["calls"] += 1
        return client.call(name, arguments or {})

    def submit(payload):
        if state["submitted"] is not None:
            raise BudgetExhausted("already submitted")
        meta = dict(payload.get("agent_metadata", {}))
        meta.setdefault("steps", state["calls"])
        payload = dict(payload, agent_metadata=meta)
        client.submit(payload)
        state["submitted"] = payload
        return payload

    if budget > 0:
        try:
            adapter(tools, call, submit, {"diagnosis": system_prompt, "submission": submission_prompt})
        except BudgetExhausted:
            pass
    if state["submitted"] is None:
        client.submit(EMPTY_SUBMISSION)
        state["submitted"] = EMPTY_SUBMISSION
    return state["submitted"]
