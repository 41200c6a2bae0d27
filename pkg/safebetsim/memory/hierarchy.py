"""
Inclusive L1/L2/L3 + DRAM latency model.

Accesses are applied in program order. Each resident block remembers when
its fill completes, so an access that finds a block whose fill is still in
flight waits for the remainder instead of getting a plain hit.
"""

from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence


class AccessKind(str, Enum):
    LOAD = "load"
    STORE = "store"
    FILL_ONLY = "fill_only"


@dataclass(frozen=True)
class CacheLevelConfig:
    name: str
    size: int
    ways: int
    hit_latency: int
    block: int = 64

    def __post_init__(self):
        if self.size <= 0 or self.ways <= 0 or self.block <= 0:
            raise ValueError(f"{self.name}: size, ways and block must be positive")
        sets, rem = divmod(self.size, self.ways * self.block)
        if rem or sets <= 0 or sets & (sets - 1):
            raise ValueError(
                f"{self.name}: {self.size} bytes over {self.ways} ways does not "
                "give a power-of-two set count"
            )

    @property
    def sets(self) -> int:
        return self.size // (self.ways * self.block)

    @property
    def capacity_blocks(self) -> int:
        return self.size // self.block


@dataclass(frozen=True)
class HierarchyConfig:
    levels: Sequence[CacheLevelConfig] = (
        CacheLevelConfig("L1", 32 * 1024, 8, 4),
        CacheLevelConfig("L2", 256 * 1024, 16, 14),
        CacheLevelConfig("L3", 2 * 1024 * 1024, 16, 40),
    )
    mem_latency: int = 200

    def __post_init__(self):
        latencies = [lvl.hit_latency for lvl in self.levels] + [self.mem_latency]
        if any(b <= a for a, b in zip(latencies, latencies[1:])):
            raise ValueError("latencies must increase from L1 towards memory")
        if len({lvl.block for lvl in self.levels}) > 1:
            raise ValueError("all levels must share one block size")


@dataclass(frozen=True)
class AccessResult:
    latency: int
    level_hit: str


@dataclass
class LevelStats:
    accesses: int = 0
    misses: int = 0

    @property
    def hits(self) -> int:
        return self.accesses - self.misses


@dataclass
class CacheStats:
    levels: Dict[str, LevelStats] = field(default_factory=dict)
    by_kind: Dict[str, int] = field(default_factory=dict)

    def misses(self, level: str) -> int:
        return self.levels[level].misses

    def mpki(self, level: str, instructions: int) -> float:
        if instructions <= 0:
            return 0.0
        return self.levels[level].misses * 1000.0 / instructions

    def to_dict(self) -> Dict[str, Dict[str, int]]:
        return {
            "levels": {name: asdict(s) for name, s in self.levels.items()},
            "by_kind": dict(self.by_kind),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "CacheStats":
        return cls(
            levels={name: LevelStats(**s) for name, s in data["levels"].items()},
            by_kind=dict(data["by_kind"]),
        )


@dataclass
class _Block:
    ready: int
    fill_latency: int


class _CacheLevel:
    def __init__(self, config: CacheLevelConfig):
        self.config = config
        self.shift = config.block.bit_length() - 1
        self.sets: List["OrderedDict[int, _Block]"] = [
            OrderedDict() for _ in range(config.sets)
        ]
        self.stats = LevelStats()

    def _set(self, block: int) -> "OrderedDict[int, _Block]":
        return self.sets[block & (self.config.sets - 1)]

    def probe(self, block: int) -> Optional[_Block]:
        entry = self._set(block).get(block)
        if entry is not None:
            self._set(block).move_to_end(block)
        return entry

    def fill(self, block: int, state: _Block) -> Optional[int]:
        """Install a block; returns the evicted block number if any."""
        st = self._set(block)
        st[block] = state
        st.move_to_end(block)
        if len(st) > self.config.ways:
            victim, _ = st.popitem(last=False)
            return victim
        return None

    def invalidate(self, block: int) -> None:
        self._set(block).pop(block, None)


class MemoryHierarchy:
    def __init__(self, config: Optional[HierarchyConfig] = None):
        self.config = config or HierarchyConfig()
        self.levels = [_CacheLevel(c) for c in self.config.levels]
        self.block_bytes = self.config.levels[0].block if self.config.levels else 64
        self._by_kind: Dict[str, int] = {k.value: 0 for k in AccessKind}

    def _evict_inner(self, depth: int, block: int) -> None:
        for inner in self.levels[:depth]:
            inner.invalidate(block)

    def access(self, addr: int, kind: AccessKind, now: int) -> AccessResult:
        """Walk the levels for ``addr`` at cycle ``now``; fills on a miss.

        A ``fill_only`` access is timed and filled exactly like a load; the
        caller must not hand its data to any consumer.
        """
        kind = AccessKind(kind)
        self._by_kind[kind.value] += 1
        block = addr >> self.levels[0].shift if self.levels else addr // 64

        hit_depth = len(self.levels)
        found: Optional[_Block] = None
        for depth, level in enumerate(self.levels):
            level.stats.accesses += 1
            found = level.probe(block)
            if found is not None:
                hit_depth = depth
                break
            level.stats.misses += 1

        if hit_depth < len(self.levels):
            base = self.levels[hit_depth].config.hit_latency
            name = self.levels[hit_depth].config.name
            latency = base
            if found is not None and found.ready > now:
                latency = max(base, min(found.ready - now, found.fill_latency))
        else:
            base = self.config.mem_latency
            name = "MEM"
            latency = base

        state = _Block(ready=now + latency, fill_latency=latency)
        for depth in range(hit_depth - 1, -1, -1):
            victim = self.levels[depth].fill(block, state)
            if victim is not None:
                self._evict_inner(depth, victim)
        return AccessResult(latency=latency, level_hit=name)

    def stats(self) -> CacheStats:
        return CacheStats(
            levels={
                lvl.config.name: LevelStats(lvl.stats.accesses, lvl.stats.misses)
                for lvl in self.levels
            },
            by_kind=dict(self._by_kind),
        )

    def resident(self, addr: int) -> List[str]:
        """Names of the levels currently holding ``addr``'s block."""
        block = addr >> self.levels[0].shift
        return [
            lvl.config.name for lvl in self.levels if block in lvl._set(block)
        ]
