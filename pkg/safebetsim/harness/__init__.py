from .builder import TraceBuilder
from .leak import (
    LeakVerdict,
    LeakWitness,
    TaintMonitor,
    check_leak,
    leak_matrix,
    monitored_run,
)
from .scenarios import ScenarioError, ScenarioKind, ScenarioSpec, generate, scenario_kinds
from .workloads import (
    WORKLOADS,
    commit_stream_misses,
    generate_workload,
    sweep_sizes,
)

__all__ = [
    "WORKLOADS",
    "LeakVerdict",
    "LeakWitness",
    "ScenarioError",
    "ScenarioKind",
    "ScenarioSpec",
    "TaintMonitor",
    "TraceBuilder",
    "check_leak",
    "commit_stream_misses",
    "generate",
    "generate_workload",
    "leak_matrix",
    "monitored_run",
    "scenario_kinds",
    "sweep_sizes",
]
