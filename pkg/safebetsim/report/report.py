"""
Aggregated experiment results and their derived views.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Tuple

from safebetsim.harness.leak import LeakVerdict, LeakWitness
from safebetsim.pipeline.policy import PolicyConfig, PolicyKind
from safebetsim.pipeline.stats import SimStats
from safebetsim.smact.geometry import SmactGeometry

RUN_COLUMNS = (
    "trace",
    "policy",
    "geometry",
    "cycles",
    "instructions",
    "ipc",
    "norm_time",
    "smact_miss_slab",
    "smact_miss_chunk",
    "smact_miss_instance",
    "smact_miss_total",
    "replays",
    "l3_mpki",
    "handler_invocations",
    "handler_cycles",
    "leaked",
)
MPKI_COLUMNS = (
    "trace",
    "policy",
    "geometry",
    "mpki_slab",
    "mpki_chunk",
    "mpki_instance",
    "mpki_total",
)
ABLATION_COLUMNS = (
    "trace",
    "geometry",
    "reference",
    "ablation",
    "norm_time",
    "reference_norm_time",
    "norm_time_delta",
    "smact_miss_total",
    "reference_miss_total",
    "miss_total_delta",
)
SWEEP_COLUMNS = ("trace", "policy", "entries", "geometry", "smact_miss_total", "cycles")
HANDLER_COST_MODEL = "single-core"


@dataclass
class RunRecord:
    """One (trace, policy, geometry) cell of the matrix."""

    trace: str
    policy: str
    geometry: str
    scenario: bool = False
    stats: Optional[SimStats] = None
    verdict: Optional[LeakVerdict] = None
    error: Optional[str] = None

    @property
    def key(self) -> Tuple[str, str, str]:
        return (self.trace, self.policy, self.geometry)

    @property
    def succeeded(self) -> bool:
        return self.error is None and self.stats is not None

    @property
    def leaked(self) -> Optional[bool]:
        if self.verdict is None:
            return None
        return self.verdict.leaked

    @property
    def policy_config(self) -> PolicyConfig:
        return PolicyConfig.parse(self.policy)

    def to_dict(self) -> Dict[str, Any]:
        witness = self.verdict.witness if self.verdict else None
        return {
            "trace": self.trace,
            "policy": self.policy,
            "geometry": self.geometry,
            "scenario": self.scenario,
            "stats": self.stats.to_dict() if self.stats else None,
            "leaked": self.leaked,
            "witness": {"seq": witness.seq, "operand": witness.operand} if witness else None,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunRecord":
        verdict = None
        if data.get("leaked") is not None:
            w = data.get("witness")
            verdict = LeakVerdict(
                leaked=data["leaked"],
                witness=LeakWitness(w["seq"], w["operand"]) if w else None,
            )
        stats = data.get("stats")
        return cls(
            trace=data["trace"],
            policy=data["policy"],
            geometry=data["geometry"],
            scenario=bool(data.get("scenario", False)),
            stats=SimStats.from_dict(stats) if stats else None,
            verdict=verdict,
            error=data.get("error"),
        )


@dataclass
class Report:
    runs: List[RunRecord] = field(default_factory=list)
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.runs = sorted(self.runs, key=lambda r: r.key)
        self.meta.setdefault("handler_cost_model", HANDLER_COST_MODEL)

    def add(self, record: RunRecord) -> None:
        self.runs.append(record)
        self.runs.sort(key=lambda r: r.key)

    def __len__(self) -> int:
        return len(self.runs)

    def find(self, trace: str, policy: str, geometry: str) -> Optional[RunRecord]:
        for record in self.runs:
            if record.key == (trace, policy, geometry):
                return record
        return None

    def failed(self) -> List[RunRecord]:
        return [r for r in self.runs if not r.succeeded]

    def security_failures(self) -> List[RunRecord]:
        """Scenario runs where a fully protected SafeBet configuration leaked."""
        return [
            r
            for r in self.runs
            if r.scenario and r.leaked and r.policy_config.fully_protected
        ]

    # -- derived views -----------------------------------------------------

    def norm_time(self, record: RunRecord) -> Optional[float]:
        """Cycles relative to Baseline on the same trace and geometry."""
        if not record.succeeded:
            return None
        if record.policy_config.kind is PolicyKind.BASELINE:
            return 1.0
        base = self.find(record.trace, PolicyConfig.baseline().label(), record.geometry)
        if base is None or not base.succeeded or base.stats.cycles <= 0:  # type: ignore[union-attr]
            return None
        return record.stats.cycles / base.stats.cycles  # type: ignore[union-attr]

    def run_rows(self) -> List[Dict[str, Any]]:
        rows = []
        for r in self.runs:
            row: Dict[str, Any] = {c: None for c in RUN_COLUMNS}
            row.update(trace=r.trace, policy=r.policy, geometry=r.geometry, leaked=r.leaked)
            s = r.stats
            if s is not None and r.error is None:
                row.update(
                    cycles=s.cycles,
                    instructions=s.committed_instructions,
                    ipc=s.ipc,
                    norm_time=self.norm_time(r),
                    smact_miss_slab=s.smact.miss_slab,
                    smact_miss_chunk=s.smact.miss_chunk,
                    smact_miss_instance=s.smact.miss_instance,
                    smact_miss_total=s.smact.total_miss,
                    replays=s.smact.replays,
                    l3_mpki=s.l3_mpki(),
                    handler_invocations=s.handler_invocations,
                    handler_cycles=s.handler_cycles,
                )
            rows.append(row)
        return rows

    def smact_mpki_rows(self) -> List[Dict[str, Any]]:
        rows = []
        for r in self.runs:
            if not r.succeeded:
                continue
            s = r.stats
            rows.append(
                {
                    "trace": r.trace,
                    "policy": r.policy,
                    "geometry": r.geometry,
                    "mpki_slab": s.smact_mpki("miss_slab"),  # type: ignore[union-attr]
                    "mpki_chunk": s.smact_mpki("miss_chunk"),  # type: ignore[union-attr]
                    "mpki_instance": s.smact_mpki("miss_instance"),  # type: ignore[union-attr]
                    "mpki_total": s.smact_mpki("total_miss"),  # type: ignore[union-attr]
                }
            )
        return rows

    def ablation_rows(self) -> List[Dict[str, Any]]:
        """Each SafeBet ablation against the full configuration it ablates."""
        rows = []
        for r in self.runs:
            if not r.succeeded:
                continue
            policy = r.policy_config
            if not policy.is_safebet:
                continue
            full = PolicyConfig.safebet_policy(charge_allocator=policy.safebet.charge_allocator)
            if policy == full:
                continue
            ref = self.find(r.trace, full.label(), r.geometry)
            if ref is None or not ref.succeeded:
                continue
            norm, ref_norm = self.norm_time(r), self.norm_time(ref)
            misses = r.stats.smact.total_miss  # type: ignore[union-attr]
            ref_misses = ref.stats.smact.total_miss  # type: ignore[union-attr]
            rows.append(
                {
                    "trace": r.trace,
                    "geometry": r.geometry,
                    "reference": ref.policy,
                    "ablation": r.policy,
                    "norm_time": norm,
                    "reference_norm_time": ref_norm,
                    "norm_time_delta": (
                        None if norm is None or ref_norm is None else norm - ref_norm
                    ),
                    "smact_miss_total": misses,
                    "reference_miss_total": ref_misses,
                    "miss_total_delta": misses - ref_misses,
                }
            )
        return rows

    def size_sweep_rows(self) -> List[Dict[str, Any]]:
        """Total misses per table size, for every (trace, policy) swept."""
        rows = []
        for r in self.runs:
            if not r.succeeded:
                continue
            rows.append(
                {
                    "trace": r.trace,
                    "policy": r.policy,
                    "entries": SmactGeometry.parse(r.geometry).entries,
                    "geometry": r.geometry,
                    "smact_miss_total": r.stats.smact.total_miss,  # type: ignore[union-attr]
                    "cycles": r.stats.cycles,  # type: ignore[union-attr]
                }
            )
        rows.sort(key=lambda row: (row["trace"], row["policy"], row["entries"], row["geometry"]))
        return rows

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> Dict[str, Any]:
        return {
            "meta": dict(self.meta),
            "runs": [
                dict(r.to_dict(), norm_time=self.norm_time(r)) for r in self.runs
            ],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Report":
        return cls(
            runs=[RunRecord.from_dict(r) for r in data.get("runs", [])],
            meta=dict(data.get("meta", {})),
        )

    @classmethod
    def of(cls, records: Iterable[RunRecord], **meta: Any) -> "Report":
        return cls(runs=list(records), meta=dict(meta))
