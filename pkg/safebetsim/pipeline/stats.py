"""
Per-run simulation statistics.
"""

from dataclasses import asdict, dataclass, field
from typing import Any, Dict

from safebetsim.memory.hierarchy import CacheStats


@dataclass
class SmactMissStats:
    """Gate outcomes of committed loads; replays count every gated load."""

    lookups: int = 0
    hits: int = 0
    inheritance_hits: int = 0
    miss_slab: int = 0
    miss_chunk: int = 0
    miss_instance: int = 0
    replays: int = 0
    wrong_path_lookups: int = 0
    wrong_path_misses: int = 0

    @property
    def total_miss(self) -> int:
        return self.miss_slab + self.miss_chunk + self.miss_instance

    def to_dict(self) -> Dict[str, int]:
        data = asdict(self)
        data["total_miss"] = self.total_miss
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SmactMissStats":
        fields = {k: v for k, v in data.items() if k != "total_miss"}
        return cls(**fields)


@dataclass
class SimStats:
    policy: str
    geometry: str
    cycles: int = 0
    committed_instructions: int = 0
    smact: SmactMissStats = field(default_factory=SmactMissStats)
    cache: CacheStats = field(default_factory=CacheStats)
    smact_table: Dict[str, int] = field(default_factory=dict)
    handler_invocations: int = 0
    handler_cycles: int = 0
    entries_revoked: int = 0
    wrong_path_fetched: int = 0
    wrong_path_issued: int = 0
    squashes: int = 0
    store_forwards: int = 0
    blocked_forwards: int = 0
    instance_crossings: int = 0
    instance_overflows: int = 0

    @property
    def ipc(self) -> float:
        if self.cycles <= 0:
            return 0.0
        return self.committed_instructions / self.cycles

    @property
    def handler_overhead(self) -> float:
        """Charged handler cycles as a fraction of all cycles."""
        if self.cycles <= 0:
            return 0.0
        return self.handler_cycles / self.cycles

    def smact_mpki(self, which: str = "total_miss") -> float:
        if self.committed_instructions <= 0:
            return 0.0
        value = self.smact.to_dict()[which]
        return value * 1000.0 / self.committed_instructions

    def l3_mpki(self) -> float:
        if "L3" not in self.cache.levels:
            return 0.0
        return self.cache.mpki("L3", self.committed_instructions)

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "policy": self.policy,
            "geometry": self.geometry,
            "cycles": self.cycles,
            "committed_instructions": self.committed_instructions,
            "ipc": self.ipc,
            "smact": self.smact.to_dict(),
            "cache": self.cache.to_dict(),
            "smact_table": dict(self.smact_table),
            "handler_overhead": self.handler_overhead,
        }
        for name in (
            "handler_invocations",
            "handler_cycles",
            "entries_revoked",
            "wrong_path_fetched",
            "wrong_path_issued",
            "squashes",
            "store_forwards",
            "blocked_forwards",
            "instance_crossings",
            "instance_overflows",
        ):
            data[name] = getattr(self, name)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SimStats":
        derived = {"ipc", "handler_overhead", "smact", "cache", "smact_table"}
        plain = {k: v for k, v in data.items() if k not in derived}
        return cls(
            smact=SmactMissStats.from_dict(data.get("smact", {})),
            cache=CacheStats.from_dict(data.get("cache", {"levels": {}, "by_kind": {}})),
            smact_table=dict(data.get("smact_table", {})),
            **plain,
        )
