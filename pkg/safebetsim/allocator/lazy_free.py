"""
64-byte-granular allocator with lazy, batched frees.

Frees are quarantined until either more than ``max_count`` frees or more than
``max_bytes`` freed bytes accumulate. Crossing a threshold hands the whole
batch to the revocation handler; the memory becomes reusable only after the
handler has invalidated every stale permission for it.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from safebetsim.smact.table import Smact
from safebetsim.utils.logger import get_logger

MIN_ALLOC = 64
MAX_PENDING_COUNT = 25_000
MAX_PENDING_BYTES = 2 * 1024 * 1024
HANDLER_COST = 10_000


class AllocatorError(RuntimeError):
    """Exhausted arena, double free or an unknown handle."""


@dataclass(frozen=True)
class LazyFreeConfig:
    max_count: int = MAX_PENDING_COUNT
    max_bytes: int = MAX_PENDING_BYTES
    handler_cost: int = HANDLER_COST
    min_alloc: int = MIN_ALLOC


@dataclass(frozen=True)
class Allocation:
    base: int
    size: int


@dataclass(frozen=True)
class HandlerInvocation:
    pending: Tuple[Allocation, ...]
    freed_bytes: int
    final_drain: bool = False

    @property
    def count(self) -> int:
        return len(self.pending)


@dataclass(frozen=True)
class HandlerResult:
    cycles: int
    entries_revoked: int


@dataclass
class LazyFreeStats:
    mallocs: int = 0
    frees: int = 0
    invocations: int = 0
    handler_cycles: int = 0
    entries_revoked: int = 0
    bytes_reclaimed: int = 0


@dataclass
class AllocatorState:
    next_addr: int
    live: Dict[int, Allocation] = field(default_factory=dict)
    pending_free: List[int] = field(default_factory=list)
    count: int = 0
    freed_size: int = 0


class LazyFreeAllocator:
    def __init__(self, heap_lo: int, heap_hi: int, config: Optional[LazyFreeConfig] = None):
        self.config = config or LazyFreeConfig()
        granule = self.config.min_alloc
        lo = -(-heap_lo // granule) * granule
        if heap_hi <= lo:
            raise ValueError("heap arena is empty")
        self.heap_lo = lo
        self.heap_hi = heap_hi
        self.state = AllocatorState(next_addr=lo)
        self.stats = LazyFreeStats()
        # reclaimed (base, size) ranges, address ordered
        self._free_ranges: List[Tuple[int, int]] = []
        self._pending_sizes: Dict[int, int] = {}
        self.logger = get_logger("LazyFreeAllocator")

    def round_size(self, size: int) -> int:
        granule = self.config.min_alloc
        return -(-size // granule) * granule

    def malloc64(self, size: int) -> int:
        """Reserve ``size`` bytes rounded up to the allocation granule."""
        if size <= 0:
            raise AllocatorError(f"malloc of non-positive size {size}")
        need = self.round_size(size)

        base: Optional[int] = None
        for i, (lo, length) in enumerate(self._free_ranges):
            if length >= need:
                base = lo
                if length == need:
                    del self._free_ranges[i]
                else:
                    self._free_ranges[i] = (lo + need, length - need)
                break

        if base is None:
            if self.state.next_addr + need > self.heap_hi:
                raise AllocatorError(
                    f"heap exhausted allocating {need} bytes "
                    f"(cursor 0x{self.state.next_addr:x}, limit 0x{self.heap_hi:x})"
                )
            base = self.state.next_addr
            self.state.next_addr += need

        self.state.live[base] = Allocation(base, need)
        self.stats.mallocs += 1
        return base

    def find_alloc_size(self, handle: int) -> int:
        alloc = self.state.live.get(handle)
        if alloc is None:
            raise AllocatorError(f"unknown handle 0x{handle:x}")
        return alloc.size

    def lazy_free(self, handle: int) -> Optional[HandlerInvocation]:
        """Quarantine ``handle``; returns a batch once a threshold is crossed."""
        if handle in self._pending_sizes:
            raise AllocatorError(f"double free of 0x{handle:x}")
        size = self.find_alloc_size(handle)
        alloc = self.state.live.pop(handle)

        st = self.state
        st.pending_free.append(handle)
        self._pending_sizes[handle] = alloc.size
        st.count += 1
        st.freed_size += size
        self.stats.frees += 1

        if st.count > self.config.max_count or st.freed_size > self.config.max_bytes:
            return self._take_batch(final_drain=False)
        return None

    def drain(self) -> Optional[HandlerInvocation]:
        """Hand over whatever is still quarantined (end of trace)."""
        if not self.state.pending_free:
            return None
        return self._take_batch(final_drain=True)

    def _take_batch(self, final_drain: bool) -> HandlerInvocation:
        st = self.state
        batch = HandlerInvocation(
            pending=tuple(Allocation(h, self._pending_sizes[h]) for h in st.pending_free),
            freed_bytes=st.freed_size,
            final_drain=final_drain,
        )
        st.pending_free = []
        st.count = 0
        st.freed_size = 0
        return batch

    def reclaim(self, invocation: HandlerInvocation) -> None:
        """Return a handled batch's ranges to the free pool."""
        for alloc in invocation.pending:
            self._pending_sizes.pop(alloc.base, None)
            self._free_ranges.append((alloc.base, alloc.size))
            self.stats.bytes_reclaimed += alloc.size
        self._free_ranges.sort()

    def is_quarantined(self, addr: int) -> bool:
        return any(
            base <= addr < base + size for base, size in self._pending_sizes.items()
        )


class RevocationHandler:
    """Invalidates a batch's permissions, charges its cost, then reclaims."""

    def __init__(
        self,
        allocator: LazyFreeAllocator,
        smact: Optional[Smact],
        revoke: bool = True,
        charge: bool = True,
    ):
        self.allocator = allocator
        self.smact = smact
        self.revoke = revoke
        self.charge = charge
        self.logger = get_logger("RevocationHandler")

    def __call__(self, invocation: HandlerInvocation) -> HandlerResult:
        revoked = 0
        if self.revoke and self.smact is not None:
            for alloc in invocation.pending:
                revoked += self.smact.revoke_range(alloc.base, alloc.size)
        # invalidation strictly precedes reuse
        self.allocator.reclaim(invocation)

        cycles = self.allocator.config.handler_cost if self.charge else 0
        stats = self.allocator.stats
        stats.invocations += 1
        stats.handler_cycles += cycles
        stats.entries_revoked += revoked
        self.logger.debug(
            f"Revocation handler: {invocation.count} frees, "
            f"{invocation.freed_bytes} bytes, {revoked} entries, {cycles} cycles"
        )
        return HandlerResult(cycles=cycles, entries_revoked=revoked)


def revocation_handler(
    pending: HandlerInvocation,
    allocator: LazyFreeAllocator,
    smact: Optional[Smact],
) -> HandlerResult:
    """One-shot form of :class:`RevocationHandler`."""
    return RevocationHandler(allocator, smact)(pending)
