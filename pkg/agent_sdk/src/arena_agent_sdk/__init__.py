"""Client SDK for the network incident arena."""

from .adapter import run_llm_agent
from .baseline import BaselineAgent, baseline_diagnose
from .client import ArenaClient, ArenaError

__all__ = ["ArenaClient", "ArenaError", "BaselineAgent", "baseline_diagnose", "run_llm_agent"]
__version__ = "0.1.0"
