"""
Speculative memory access control table.

Entries are keyed by (destination tag, source key) inside the set selected by
the destination's index bits, and carry a chunk presence mask for the slab.
The source key is an instance ID in the normal configuration; callers may
fold other source information into it (see ``pipeline.policy.source_key``).
"""

import heapq
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Dict, List, Optional, Set, Tuple

from loguru import logger

from .geometry import AddressSplit, SmactGeometry, split_address


class Verdict(str, Enum):
    HIT = "Hit"
    HIT_BY_INHERITANCE = "HitByInheritance"
    MISS_SLAB = "MissSlab"
    MISS_CHUNK = "MissChunk"
    MISS_INSTANCE = "MissInstance"

    @property
    def is_hit(self) -> bool:
        return self in (Verdict.HIT, Verdict.HIT_BY_INHERITANCE)


@dataclass(frozen=True)
class LookupResult:
    verdict: Verdict

    @property
    def hit(self) -> bool:
        return self.verdict.is_hit


@dataclass
class SmactEntry:
    tag: int
    inst: int
    chunk_mask: int
    lru: int = 0

    def copy(self) -> "SmactEntry":
        return SmactEntry(self.tag, self.inst, self.chunk_mask, self.lru)


@dataclass
class SmactCounters:
    lookups: int = 0
    hits: int = 0
    inheritance_hits: int = 0
    miss_slab: int = 0
    miss_chunk: int = 0
    miss_instance: int = 0
    inserts: int = 0
    updates: int = 0
    evictions: int = 0
    revoke_calls: int = 0
    entries_revoked: int = 0
    flushes: int = 0

    @property
    def total_miss(self) -> int:
        return self.miss_slab + self.miss_chunk + self.miss_instance

    def as_dict(self) -> Dict[str, int]:
        data = asdict(self)
        data["total_miss"] = self.total_miss
        return data


class _Set:
    """One associative set: way slots plus lookup indexes."""

    __slots__ = ("slots", "keys", "by_tag", "free")

    def __init__(self, ways: int):
        self.slots: List[Optional[SmactEntry]] = [None] * ways
        self.free: List[int] = list(range(ways))
        self.keys: Dict[Tuple[int, int], int] = {}
        self.by_tag: Dict[int, Set[int]] = {}

    def get(self, tag: int, inst: int) -> Optional[SmactEntry]:
        way = self.keys.get((tag, inst))
        return None if way is None else self.slots[way]

    def place(self, way: int, entry: SmactEntry) -> None:
        self.slots[way] = entry
        self.keys[(entry.tag, entry.inst)] = way
        self.by_tag.setdefault(entry.tag, set()).add(entry.inst)

    def remove(self, way: int) -> SmactEntry:
        entry = self.slots[way]
        assert entry is not None
        self.slots[way] = None
        del self.keys[(entry.tag, entry.inst)]
        heapq.heappush(self.free, way)
        insts = self.by_tag[entry.tag]
        insts.discard(entry.inst)
        if not insts:
            del self.by_tag[entry.tag]
        return entry


class Smact:
    def __init__(self, geometry: Optional[SmactGeometry] = None):
        self.geometry = geometry or SmactGeometry()
        self.stats = SmactCounters()
        self._stamp = 0
        self._sets: List[_Set] = []
        self._reset_sets()

    def _reset_sets(self) -> None:
        ways = 0 if self.geometry.unbounded else self.geometry.ways
        self._sets = [_Set(ways) for _ in range(self.geometry.sets)]

    def _touch(self, entry: SmactEntry) -> None:
        self._stamp += 1
        entry.lru = self._stamp

    def split(self, a: int) -> AddressSplit:
        return split_address(a, self.geometry)

    def lookup(
        self,
        a: int,
        access_inst: int,
        lbtos_inst: Optional[int] = None,
        accessor_is_owner: bool = False,
    ) -> LookupResult:
        """Check whether ``access_inst`` (or an inheritable frame) holds ``a``."""
        s = self.split(a)
        bit = 1 << s.chunk_bit
        st = self._sets[s.index]
        self.stats.lookups += 1

        own = st.get(s.tag, access_inst)
        if own is not None and own.chunk_mask & bit:
            self._touch(own)
            self.stats.hits += 1
            return LookupResult(Verdict.HIT)

        inherited: Optional[SmactEntry] = None
        if accessor_is_owner and lbtos_inst is not None:
            inherited = st.get(s.tag, lbtos_inst)
            if inherited is not None and inherited.chunk_mask & bit:
                self._touch(inherited)
                self.stats.inheritance_hits += 1
                return LookupResult(Verdict.HIT_BY_INHERITANCE)

        if own is not None or inherited is not None:
            self.stats.miss_chunk += 1
            return LookupResult(Verdict.MISS_CHUNK)
        for inst in st.by_tag.get(s.tag, ()):
            other = st.get(s.tag, inst)
            if other is not None and other.chunk_mask & bit:
                self.stats.miss_instance += 1
                return LookupResult(Verdict.MISS_INSTANCE)
        self.stats.miss_slab += 1
        return LookupResult(Verdict.MISS_SLAB)

    def insert(self, a: int, inst: int) -> Optional[SmactEntry]:
        """Record a committed access; returns the evicted entry, if any."""
        s = self.split(a)
        bit = 1 << s.chunk_bit
        st = self._sets[s.index]

        entry = st.get(s.tag, inst)
        if entry is not None:
            entry.chunk_mask |= bit
            self._touch(entry)
            self.stats.updates += 1
            return None

        self.stats.inserts += 1
        victim: Optional[SmactEntry] = None
        if st.free:
            way = heapq.heappop(st.free)
        elif self.geometry.unbounded:
            st.slots.append(None)
            way = len(st.slots) - 1
        else:
            way = min(range(len(st.slots)), key=lambda w: st.slots[w].lru)  # type: ignore[union-attr]
            victim = st.remove(way)
            heapq.heappop(st.free)
            self.stats.evictions += 1

        entry = SmactEntry(tag=s.tag, inst=inst, chunk_mask=bit)
        self._touch(entry)
        st.place(way, entry)
        return victim

    def _slab_mask(self, slab_base: int, lo: int, hi: int) -> int:
        g = self.geometry
        first = (max(lo, slab_base) - slab_base) // g.chunk_bytes
        last = (min(hi, slab_base + g.slab_bytes) - 1 - slab_base) // g.chunk_bytes
        return ((1 << (last - first + 1)) - 1) << first

    def revoke_range(self, lo: int, length: int) -> int:
        """Clear every chunk of [lo, lo+length) for all instances."""
        if length <= 0:
            raise ValueError("revocation length must be positive")
        g = self.geometry
        hi = lo + length
        first_slab = lo // g.slab_bytes
        last_slab = (hi - 1) // g.slab_bytes
        touched = 0
        self.stats.revoke_calls += 1

        if last_slab - first_slab + 1 <= self.valid_entries():
            for slab in range(first_slab, last_slab + 1):
                base = slab * g.slab_bytes
                s = self.split(base)
                st = self._sets[s.index]
                mask = self._slab_mask(base, lo, hi)
                for inst in list(st.by_tag.get(s.tag, ())):
                    touched += self._clear(st, st.keys[(s.tag, inst)], mask)
        else:
            shift = g.index_bits + g.offset_bits
            for index, st in enumerate(self._sets):
                for way, entry in enumerate(st.slots):
                    if entry is None:
                        continue
                    base = (entry.tag << shift) | (index << g.offset_bits)
                    if base + g.slab_bytes <= lo or base >= hi:
                        continue
                    touched += self._clear(st, way, self._slab_mask(base, lo, hi))

        self.stats.entries_revoked += touched
        return touched

    def _clear(self, st: _Set, way: int, mask: int) -> int:
        entry = st.slots[way]
        assert entry is not None
        if not entry.chunk_mask & mask:
            return 0
        entry.chunk_mask &= ~mask
        if not entry.chunk_mask:
            st.remove(way)
        return 1

    def flush(self) -> None:
        """Invalidate every entry; counters are kept."""
        self.stats.flushes += 1
        self._reset_sets()
        logger.debug("SMACT flushed")

    def valid_entries(self) -> int:
        return sum(len(st.keys) for st in self._sets)

    def snapshot(self) -> List[Tuple[int, int, SmactEntry]]:
        """Copy of all valid entries as (set, way, entry)."""
        return [
            (index, way, entry.copy())
            for index, st in enumerate(self._sets)
            for way, entry in enumerate(st.slots)
            if entry is not None
        ]

    def dump(self) -> str:
        lines = [
            f"set={index} way={way} tag=0x{e.tag:x} inst={e.inst} mask=0x{e.chunk_mask:x}"
            for index, way, e in self.snapshot()
        ]
        return "\n".join(lines)
