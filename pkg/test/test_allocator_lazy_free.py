#!/usr/bin/env python3
"""
Unit tests for safebetsim.allocator.lazy_free module.
"""

import pytest

from safebetsim.allocator.lazy_free import (
    HANDLER_COST,
    AllocatorError,
    LazyFreeAllocator,
    LazyFreeConfig,
    RevocationHandler,
    revocation_handler,
)
from safebetsim.smact.table import Smact, Verdict

HEAP_LO = 0x20_0000_0000
HEAP_HI = 0x21_0000_0000


@pytest.fixture
def allocator():
    return LazyFreeAllocator(HEAP_LO, HEAP_HI)


class TestMalloc:
    """Test cases for malloc64 and find_alloc_size."""

    def test_rounds_to_granule(self, allocator):
        handle = allocator.malloc64(100)
        assert handle % 64 == 0
        assert allocator.find_alloc_size(handle) == 128

    def test_bump_allocation(self, allocator):
        a = allocator.malloc64(64)
        b = allocator.malloc64(1)
        assert b == a + 64

    def test_unaligned_heap_start(self):
        alloc = LazyFreeAllocator(HEAP_LO + 8, HEAP_HI)
        assert alloc.malloc64(8) == HEAP_LO + 64

    @pytest.mark.parametrize("size", [0, -64])
    def test_non_positive_size(self, allocator, size):
        with pytest.raises(AllocatorError):
            allocator.malloc64(size)

    def test_heap_exhausted(self):
        alloc = LazyFreeAllocator(HEAP_LO, HEAP_LO + 256)
        alloc.malloc64(256)
        with pytest.raises(AllocatorError, match="exhausted"):
            alloc.malloc64(64)

    def test_empty_arena(self):
        with pytest.raises(ValueError):
            LazyFreeAllocator(HEAP_LO, HEAP_LO)

    def test_unknown_handle(self, allocator):
        with pytest.raises(AllocatorError, match="unknown handle"):
            allocator.find_alloc_size(HEAP_LO + 4096)


class TestLazyFree:
    """Test cases for lazy_free thresholds."""

    def test_count_threshold(self, allocator):
        """The 25,001st pending free hands the batch over; earlier ones do not."""
        handles = [allocator.malloc64(64) for _ in range(25_001)]
        for handle in handles[:-1]:
            assert allocator.lazy_free(handle) is None

        batch = allocator.lazy_free(handles[-1])

        assert batch is not None
        assert batch.count == 25_001
        assert not batch.final_drain
        assert allocator.state.count == 0
        assert allocator.state.pending_free == []

    def test_single_large_free(self, allocator):
        handle = allocator.malloc64(2 * 1024 * 1024 + 64)
        batch = allocator.lazy_free(handle)
        assert batch is not None
        assert batch.freed_bytes == 2 * 1024 * 1024 + 64

    def test_exactly_at_byte_limit_waits(self, allocator):
        handle = allocator.malloc64(2 * 1024 * 1024)
        assert allocator.lazy_free(handle) is None
        assert allocator.state.freed_size == 2 * 1024 * 1024

    def test_small_thresholds(self):
        alloc = LazyFreeAllocator(HEAP_LO, HEAP_HI, LazyFreeConfig(max_count=2))
        handles = [alloc.malloc64(64) for _ in range(3)]
        results = [alloc.lazy_free(h) for h in handles]
        assert results[:2] == [None, None]
        assert results[2].count == 3

    def test_double_free(self, allocator):
        handle = allocator.malloc64(64)
        allocator.lazy_free(handle)
        with pytest.raises(AllocatorError, match="double free"):
            allocator.lazy_free(handle)

    def test_free_of_unknown_handle(self, allocator):
        with pytest.raises(AllocatorError):
            allocator.lazy_free(HEAP_LO)

    def test_quarantined_memory_is_not_reused(self, allocator):
        first = allocator.malloc64(128)
        allocator.lazy_free(first)
        assert allocator.is_quarantined(first + 64)
        assert allocator.malloc64(128) != first

    def test_drain(self, allocator):
        assert allocator.drain() is None
        allocator.lazy_free(allocator.malloc64(64))
        batch = allocator.drain()
        assert batch.final_drain
        assert batch.count == 1


class TestRevocationHandler:
    """Test cases for RevocationHandler."""

    def test_revokes_then_reclaims(self, allocator):
        smact = Smact()
        handle = allocator.malloc64(128)
        smact.insert(handle, 1)
        smact.insert(handle + 64, 1)
        assert smact.lookup(handle, 1).hit

        allocator.lazy_free(handle)
        result = RevocationHandler(allocator, smact)(allocator.drain())

        assert result.cycles == HANDLER_COST == 10_000
        assert result.entries_revoked == 1
        assert smact.lookup(handle, 1).verdict is Verdict.MISS_SLAB
        assert smact.lookup(handle + 64, 1).verdict is Verdict.MISS_SLAB
        assert not allocator.is_quarantined(handle)
        assert allocator.malloc64(128) == handle

    def test_stats_accumulate(self, allocator):
        handler = RevocationHandler(allocator, Smact())
        for _ in range(3):
            allocator.lazy_free(allocator.malloc64(64))
            handler(allocator.drain())
        stats = allocator.stats
        assert stats.invocations == 3
        assert stats.handler_cycles == 30_000
        assert stats.bytes_reclaimed == 192

    def test_uncharged_handler(self, allocator):
        allocator.lazy_free(allocator.malloc64(64))
        result = RevocationHandler(allocator, Smact(), charge=False)(allocator.drain())
        assert result.cycles == 0
        assert allocator.stats.handler_cycles == 0

    def test_revocation_disabled_leaves_permissions(self, allocator):
        smact = Smact()
        handle = allocator.malloc64(64)
        smact.insert(handle, 1)
        allocator.lazy_free(handle)

        RevocationHandler(allocator, smact, revoke=False)(allocator.drain())

        assert smact.lookup(handle, 1).hit
        assert allocator.malloc64(64) == handle

    def test_one_shot_form(self, allocator):
        allocator.lazy_free(allocator.malloc64(64))
        result = revocation_handler(allocator.drain(), allocator, None)
        assert result.entries_revoked == 0
        assert result.cycles == HANDLER_COST


if __name__ == "__main__":
    pytest.main([__file__])
