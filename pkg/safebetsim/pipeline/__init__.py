from .core import Pipeline, SimulationError, TaintObserver, replay_at_commit, run
from .policy import (
    NEVER,
    CoreConfig,
    LoadAction,
    LoadState,
    LoadTiming,
    PolicyConfig,
    PolicyKind,
    SafeBetOptions,
    SourceCoarsening,
    default_policies,
    gate_load,
    source_key,
    wakeup_time,
)
from .stats import SimStats, SmactMissStats

__all__ = [
    "NEVER",
    "CoreConfig",
    "LoadAction",
    "LoadState",
    "LoadTiming",
    "Pipeline",
    "PolicyConfig",
    "PolicyKind",
    "SafeBetOptions",
    "SimStats",
    "SimulationError",
    "SmactMissStats",
    "SourceCoarsening",
    "TaintObserver",
    "default_policies",
    "gate_load",
    "replay_at_commit",
    "run",
    "source_key",
    "wakeup_time",
]
