"""Discrete-event simulator; the compiled kernel is used when available."""
from .engine import (
    BACKENDS,
    DEFAULT_BACKEND,
    AgentState,
    Event,
    EventKind,
    RunRecord,
    SimulationError,
    adapt_step,
    run,
    shift_target,
)

__all__ = [
    "BACKENDS",
    "DEFAULT_BACKEND",
    "AgentState",
    "Event",
    "EventKind",
    "RunRecord",
    "SimulationError",
    "adapt_step",
    "run",
    "shift_target",
]
