#!/usr/bin/env python3
"""
Unit tests for safebetsim.harness.builder module.
"""

import pytest

from safebetsim.allocator.lazy_free import (
    MAX_PENDING_BYTES,
    MAX_PENDING_COUNT,
    LazyFreeConfig,
)
from safebetsim.harness.builder import CODE_OFFSET, INSN_BYTES, TraceBuilder
from safebetsim.trace.model import REGION_SIZE, DirectiveKind, HeapArena, OpKind

HEAP_LO = 0x20_0000_0000
HEAP_HI = 0x21_0000_0000


@pytest.fixture
def b():
    builder = TraceBuilder()
    builder.add_region(0, owner=True)
    builder.add_region(1)
    return builder


class TestTraceBuilder:
    """Test cases for TraceBuilder."""

    def test_first_region_is_the_cursor(self, b):
        assert b.region == 0
        assert b.peek_pc() == REGION_SIZE + CODE_OFFSET

    def test_pcs_advance_per_region(self, b):
        first = b.alu("a")
        second = b.alu("b", "a")
        b.at(1)
        third = b.alu("c")
        assert second.pc == first.pc + INSN_BYTES
        assert third.pc == 2 * REGION_SIZE + CODE_OFFSET
        assert [op.seq for op in (first, second, third)] == [0, 1, 2]

    def test_duplicate_region(self, b):
        with pytest.raises(ValueError):
            b.add_region(1)

    def test_unknown_region(self, b):
        with pytest.raises(KeyError):
            b.at(5)

    def test_no_region_declared(self):
        with pytest.raises(RuntimeError):
            TraceBuilder().alu("a")

    def test_call_moves_the_cursor(self, b):
        op = b.call(1)
        assert op.kind is OpKind.CALL
        assert op.target == 2 * REGION_SIZE + CODE_OFFSET
        assert b.region == 1
        b.ret(0)
        assert b.region == 0

    def test_speculate_marks_wrong_path(self, b):
        b.branch(resolve=30, mispredict=True)
        with b.speculate(region=1):
            wp = b.alu("x")
            b.call(0)
        after = b.alu("y")

        assert wp.wrong_path
        assert wp.pc == 2 * REGION_SIZE + CODE_OFFSET
        assert not after.wrong_path
        assert b.region == 0

    def test_speculate_requires_mispredicted_op(self, b):
        b.branch(resolve=3)
        with pytest.raises(ValueError):
            with b.speculate():
                pass

    def test_mispredicted_transfer(self, b):
        op = b.call(1, resolve=40, mispredict=True)
        assert op.mispredicted
        assert op.branch_info.resolve_after == 40

    def test_directives_record_position(self, b):
        b.set_heap(HEAP_LO, HEAP_HI)
        b.alu("a")
        handle = b.malloc(100)
        b.alu("b")
        b.free(handle)
        b.set_owner(1)

        trace = b.build()

        assert [d.kind for d in trace.directives] == [
            DirectiveKind.MALLOC,
            DirectiveKind.FREE,
            DirectiveKind.SET_OWNER,
        ]
        assert [d.position for d in trace.directives] == [1, 2, 2]
        assert trace.header.heap == HeapArena(
            HEAP_LO, HEAP_HI, MAX_PENDING_COUNT, MAX_PENDING_BYTES
        )

    def test_no_directives_on_wrong_path(self, b):
        b.branch(resolve=30, mispredict=True)
        with b.speculate():
            with pytest.raises(ValueError):
                b.set_owner(1)

    def test_heap_required(self, b):
        with pytest.raises(ValueError, match="heap"):
            b.malloc(64)
        with pytest.raises(ValueError, match="heap"):
            b.free(HEAP_LO)

    def test_mirrored_allocator_reuses_after_batch(self, b):
        b.set_heap(HEAP_LO, HEAP_HI, LazyFreeConfig(max_count=0))
        first = b.malloc(64)
        b.free(first)
        assert b.malloc(64) == first
        assert b.build().header.heap.max_count == 0

    def test_ends_in_wrong_path(self, b):
        b.branch(resolve=30, mispredict=True)
        with b.speculate():
            b.alu("x")
        assert b.ends_in_wrong_path
        b.alu("y")
        assert not b.ends_in_wrong_path

    def test_build_header(self, b):
        b.add_data(1, 0x10_0000_0000, 4096)
        b.add_secret(0x10_0000_0010, 4)
        b.alu("a")
        trace = b.build()
        assert [r.id for r in trace.header.regions] == [0, 1]
        assert trace.header.owner == 0
        assert trace.header.is_secret(0x10_0000_0013)
        assert len(b) == 1


if __name__ == "__main__":
    pytest.main([__file__])
