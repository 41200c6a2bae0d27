"""
Channel-agnostic leak detection.

A leak is a secret-derived value reaching a source operand of an op that
actually issued. Cache residency of secret bytes from a gated fill is not a
leak: the value never enters the pipeline.
"""

from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple

import pandas as pd

from safebetsim.allocator.lazy_free import LazyFreeConfig
from safebetsim.memory.hierarchy import HierarchyConfig
from safebetsim.pipeline.core import run
from safebetsim.pipeline.policy import CoreConfig, PolicyConfig
from safebetsim.pipeline.stats import SimStats
from safebetsim.smact.geometry import SmactGeometry
from safebetsim.trace.model import MicroOp, Trace

from .scenarios import ScenarioSpec, generate


@dataclass(frozen=True)
class LeakWitness:
    seq: int
    operand: str


@dataclass(frozen=True)
class LeakVerdict:
    leaked: bool
    witness: Optional[LeakWitness] = None

    def __post_init__(self):
        if self.leaked and self.witness is None:
            raise ValueError("a leak verdict needs a witness")


class TaintMonitor:
    """Records the first issued op that consumes a tainted operand."""

    def __init__(self):
        self.witness: Optional[LeakWitness] = None
        self.issued = 0

    def observe(self, op: MicroOp, issued: bool, tainted_sources: Tuple[str, ...]) -> None:
        if not issued:
            return
        self.issued += 1
        if tainted_sources and self.witness is None:
            self.witness = LeakWitness(op.seq, tainted_sources[0])

    def verdict(self) -> LeakVerdict:
        return LeakVerdict(leaked=self.witness is not None, witness=self.witness)


def monitored_run(
    trace: Trace,
    policy: PolicyConfig,
    core: Optional[CoreConfig] = None,
    geometry: Optional[SmactGeometry] = None,
    hierarchy: Optional[HierarchyConfig] = None,
    lazy_free: Optional[LazyFreeConfig] = None,
) -> Tuple[SimStats, LeakVerdict]:
    monitor = TaintMonitor()
    stats = run(
        trace,
        policy,
        core=core,
        geometry=geometry,
        hierarchy=hierarchy,
        lazy_free=lazy_free,
        monitor=monitor,
    )
    return stats, monitor.verdict()


def check_leak(
    trace: Trace,
    policy: PolicyConfig,
    core: Optional[CoreConfig] = None,
    geometry: Optional[SmactGeometry] = None,
    hierarchy: Optional[HierarchyConfig] = None,
    lazy_free: Optional[LazyFreeConfig] = None,
) -> LeakVerdict:
    """Simulate ``trace`` under ``policy`` and report whether its secrets leaked."""
    return monitored_run(trace, policy, core, geometry, hierarchy, lazy_free)[1]


def leak_matrix(
    kinds: Iterable[str],
    policies: Iterable[PolicyConfig],
    seeds: Iterable[int],
) -> pd.DataFrame:
    """Leak verdict for every (scenario kind, policy, seed)."""
    policies = list(policies)
    seeds = list(seeds)
    rows: List[dict] = []
    for kind in kinds:
        for seed in seeds:
            trace = generate(ScenarioSpec(kind=kind, seed=seed))
            for policy in policies:
                verdict = check_leak(trace, policy)
                rows.append(
                    {
                        "kind": kind,
                        "policy": policy.label(),
                        "seed": seed,
                        "leaked": verdict.leaked,
                        "witness_seq": verdict.witness.seq if verdict.witness else None,
                    }
                )
    return pd.DataFrame(rows, columns=["kind", "policy", "seed", "leaked", "witness_seq"])
