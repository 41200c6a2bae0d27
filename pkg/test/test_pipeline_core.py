#!/usr/bin/env python3
"""
Unit tests for safebetsim.pipeline.core module.
"""

from dataclasses import replace

import pytest

from safebetsim.allocator.lazy_free import LazyFreeConfig
from safebetsim.harness.builder import TraceBuilder
from safebetsim.harness.workloads import free_heavy
from safebetsim.memory.hierarchy import AccessKind, MemoryHierarchy
from safebetsim.pipeline.core import SimulationError, allocator_config, replay_at_commit, run
from safebetsim.pipeline.policy import PolicyConfig
from safebetsim.trace.model import Directive, DirectiveKind, HeapArena, MicroOp, OpKind, Trace

DATA = 0x10_0000_0000
HEAP_LO = 0x20_0000_0000
HEAP_HI = 0x21_0000_0000

BASELINE = PolicyConfig.baseline()
SAFEBET = PolicyConfig.safebet_policy()


class Recorder:
    """Collects what the core reports for every op."""

    def __init__(self):
        self.seen = []

    def observe(self, op, issued, tainted_sources):
        self.seen.append((op.seq, issued, tainted_sources))


def builder() -> TraceBuilder:
    b = TraceBuilder()
    b.add_region(0)
    b.add_data(0, DATA, 1 << 20)
    return b


class TestTiming:
    """Test cases for correct-path timing."""

    def test_single_alu(self):
        b = builder()
        b.alu("a")
        stats = run(b.build(), BASELINE)
        assert stats.cycles == 5
        assert stats.committed_instructions == 1

    def test_dependent_chain(self):
        b = builder()
        b.alu("a")
        b.alu("b", "a")
        b.alu("c", "b")
        assert run(b.build(), BASELINE).cycles == 7

    def test_empty_trace(self):
        stats = run(builder().build(), BASELINE)
        assert stats.cycles == 0
        assert stats.ipc == 0.0

    def test_cold_load_then_consumer(self):
        b = builder()
        b.load(DATA, "x")
        b.alu("y", "x")
        assert run(b.build(), BASELINE).cycles == 205

    def test_restrictive_delays_consumer_until_commit(self):
        b = builder()
        b.load(DATA, "x")
        b.alu("y", "x")
        assert run(b.build(), PolicyConfig.nda_restrictive()).cycles == 206

    def test_store_forwarding(self):
        b = builder()
        b.store(DATA, ["v"])
        b.load(DATA, "x")
        stats = run(b.build(), BASELINE)
        assert stats.store_forwards == 1

    def test_l1_hits_recorded(self):
        b = builder()
        b.load(DATA, "x")
        b.fence()
        b.load(DATA + 8, "y")
        stats = run(b.build(), BASELINE)
        assert stats.cache.levels["L1"].misses == 1
        assert stats.cache.levels["L1"].accesses == 2


class TestSafeBetGate:
    """Test cases for the permission-table gate."""

    def test_gated_load_replays_at_head(self):
        """The second cold load waits for the first to commit before replaying."""
        b = builder()
        b.load(DATA, "x")
        b.load(DATA + 0x10000, "y")

        baseline = run(b.build(), BASELINE)
        safebet = run(b.build(), SAFEBET)

        assert baseline.cycles == 204
        assert safebet.cycles == 209
        assert safebet.smact.miss_slab == 2
        assert safebet.smact.replays == 2
        assert safebet.smact.lookups == 2

    def test_committed_access_grants_permission(self):
        b = builder()
        b.load(DATA, "x")
        b.set_owner(0)
        b.load(DATA + 8, "y")

        stats = run(b.build(), SAFEBET)

        assert stats.smact.miss_slab == 1
        assert stats.smact.hits == 1
        assert stats.smact.replays == 1
        assert stats.smact_table["inserts"] == 1

    def test_other_policies_skip_the_table(self):
        b = builder()
        b.load(DATA, "x")
        stats = run(b.build(), BASELINE)
        assert stats.smact.lookups == 0
        assert stats.smact_table == {}

    def test_gated_load_blocks_forwarding(self):
        b = builder()
        b.store(DATA, ["v"])
        b.load(DATA, "x")
        stats = run(b.build(), SAFEBET)
        assert stats.blocked_forwards == 1
        assert stats.store_forwards == 0

    def test_geometry_label_is_configured_geometry(self):
        b = builder()
        b.load(DATA, "x")
        stats = run(b.build(), PolicyConfig.parse("safebet-nobitmask"))
        assert stats.geometry == "512x8-4096/64"


class TestWrongPath:
    """Test cases for mispredicted control flow."""

    def _transient(self) -> Trace:
        b = builder()
        b.branch(resolve=300, mispredict=True)
        with b.speculate():
            b.load(0x30_0000_0000, "s", secret=True)
            b.load(DATA, "p", srcs=["s"])
        return b.build()

    def test_squash_restarts_fetch(self):
        b = builder()
        b.branch(resolve=20, mispredict=True)
        with b.speculate():
            b.filler(3)
        b.alu("a")

        stats = run(b.build(), BASELINE)

        assert stats.squashes == 1
        assert stats.wrong_path_fetched == 3
        assert stats.committed_instructions == 2
        assert stats.cycles == 29

    def test_baseline_forwards_secret(self):
        recorder = Recorder()
        run(self._transient(), BASELINE, monitor=recorder)
        assert recorder.seen[-1] == (2, True, ("s",))

    @pytest.mark.parametrize(
        "name", ["nda-restrictive", "nda-permissive-0", "nda-permissive-4", "safebet"]
    )
    def test_protected_policies_hold_dependents(self, name):
        recorder = Recorder()
        run(self._transient(), PolicyConfig.parse(name), monitor=recorder)
        seq, issued, _ = recorder.seen[-1]
        assert seq == 2
        assert not issued

    def test_wrong_path_lookups_counted(self):
        stats = run(self._transient(), SAFEBET)
        assert stats.smact.wrong_path_lookups == 1
        assert stats.smact.wrong_path_misses == 1
        assert stats.smact.lookups == 0

    def test_forwarded_secret_stays_tainted(self):
        """A wrong-path load of a secret still in the store buffer carries the taint."""
        b = builder()
        secret = DATA + 0x4000
        b.add_secret(secret)
        b.load(DATA + 0x8000, "slow")
        # commits behind the cold load, so it is still buffered below
        b.store(secret, ["v"], size=1)
        b.branch(resolve=100, mispredict=True)
        with b.speculate():
            b.load(secret, "s", size=1)
            b.load(DATA, "p", srcs=["s"])
        b.alu("a")

        recorder = Recorder()
        stats = run(b.build(), BASELINE, monitor=recorder)

        assert stats.store_forwards == 1
        assert (4, True, ("s",)) in recorder.seen

    def test_wrong_path_op_without_opener(self):
        b = builder()
        b.alu("a")
        trace = b.build()
        stray = MicroOp(1, OpKind.ALU, trace.ops[0].pc + 4, wrong_path=True)
        with pytest.raises(SimulationError) as exc:
            run(Trace(trace.header, trace.ops + (stray,)), BASELINE)
        assert exc.value.seq == 1


class TestInheritance:
    """Test cases for owner accesses that inherit the caller's permissions."""

    def _deputy(self, settle: int) -> Trace:
        b = TraceBuilder()
        b.add_region(0, owner=True)
        b.add_region(1)
        b.at(1)
        b.add_data(1, DATA, 1 << 20)
        b.load(DATA, "w")
        b.filler(256)
        b.call(0)
        b.filler(settle)
        b.load(DATA, "x")
        return b.build()

    def test_owner_inherits_after_crossing_commits(self):
        stats = run(self._deputy(256), SAFEBET)
        assert stats.smact.inheritance_hits == 1
        assert stats.smact.miss_instance == 0
        # only the visitor's first touch replays
        assert stats.smact.replays == 1

    def test_without_inheritance_the_owner_misses(self):
        stats = run(self._deputy(256), PolicyConfig.parse("safebet-noinherit"))
        assert stats.smact.inheritance_hits == 0
        assert stats.smact.miss_instance == 1

    def test_crossing_in_flight_holds_no_permissions(self):
        """The callee instance owns nothing, inherited or not, until the call commits."""
        stats = run(self._deputy(0), SAFEBET)
        assert stats.smact.inheritance_hits == 0
        assert stats.smact.miss_instance == 1


class TestDirectives:
    """Test cases for allocator directives and the revocation handler."""

    def _heap_trace(self) -> Trace:
        b = builder()
        b.set_heap(HEAP_LO, HEAP_HI, LazyFreeConfig(max_count=1))
        b.alu("a")
        first = b.malloc(64)
        second = b.malloc(64)
        b.free(first)
        b.free(second)
        b.alu("b")
        return b.build()

    @pytest.mark.parametrize(
        "name,cycles,handler_cycles,invocations",
        [
            ("baseline", 5, 0, 0),
            ("safebet", 11, 0, 1),
            ("safebet+mlf", 10_011, 10_000, 1),
        ],
    )
    def test_handler_cost(self, name, cycles, handler_cycles, invocations):
        stats = run(
            self._heap_trace(),
            PolicyConfig.parse(name),
            lazy_free=LazyFreeConfig(max_count=1),
        )
        assert stats.cycles == cycles
        assert stats.handler_cycles == handler_cycles
        assert stats.handler_invocations == invocations

    def test_directive_without_heap(self):
        b = builder()
        b.alu("a")
        trace = b.build()
        bad = Trace(trace.header, trace.ops, (Directive(DirectiveKind.MALLOC, 64, 0),))
        with pytest.raises(SimulationError, match="heap"):
            run(bad, BASELINE)

    def test_double_free_surfaces_as_simulation_error(self):
        b = builder()
        b.set_heap(HEAP_LO, HEAP_HI)
        b.alu("a")
        handle = b.malloc(64)
        trace = b.build()
        frees = tuple(Directive(DirectiveKind.FREE, handle, 1) for _ in range(2))
        with pytest.raises(SimulationError, match="double free"):
            run(Trace(trace.header, trace.ops, trace.directives + frees), BASELINE)

    def test_header_thresholds_win(self):
        """Handles were computed with max_count=1, so the run keeps it."""
        stats = run(self._heap_trace(), PolicyConfig.parse("safebet+mlf"))
        assert stats.cycles == 10_011
        assert stats.handler_invocations == 1

    def test_bare_heap_uses_configured_thresholds(self):
        trace = self._heap_trace()
        header = replace(trace.header, heap=HeapArena(HEAP_LO, HEAP_HI))
        bare = Trace(header, trace.ops, trace.directives)
        policy = PolicyConfig.parse("safebet+mlf")

        assert run(bare, policy, lazy_free=LazyFreeConfig(max_count=1)).cycles == 10_011
        # nothing crosses the default thresholds; the batch waits for the final drain
        assert run(bare, policy).cycles == 10_005

    def test_configured_thresholds_do_not_desync_handles(self):
        trace = free_heavy(seed=0, frees=3000)
        stats = run(trace, SAFEBET, lazy_free=LazyFreeConfig(max_count=1000))
        assert stats.handler_invocations == 1
        assert stats.committed_instructions == len(trace.ops)

    def test_allocator_config(self):
        bare = HeapArena(HEAP_LO, HEAP_HI)
        pinned = HeapArena(HEAP_LO, HEAP_HI, 5, 4096)
        configured = LazyFreeConfig(max_count=1, handler_cost=7)

        assert allocator_config(bare, None) == LazyFreeConfig()
        assert allocator_config(bare, configured) == configured
        assert allocator_config(pinned, None) == LazyFreeConfig(max_count=5, max_bytes=4096)
        assert allocator_config(pinned, configured) == LazyFreeConfig(5, 4096, handler_cost=7)


class TestReplayAtCommit:
    """Test cases for replay_at_commit."""

    def test_cold_replay(self):
        memory = MemoryHierarchy()
        assert replay_at_commit(memory, DATA, head=100, gate_done=10) == 300

    def test_waits_for_inflight_fill(self):
        memory = MemoryHierarchy()
        memory.access(DATA, AccessKind.FILL_ONLY, 0)
        assert replay_at_commit(memory, DATA, head=50, gate_done=7) == 200

    def test_completed_fill_is_l1_hit(self):
        memory = MemoryHierarchy()
        memory.access(DATA, AccessKind.FILL_ONLY, 0)
        assert replay_at_commit(memory, DATA, head=500, gate_done=7) == 504


if __name__ == "__main__":
    pytest.main([__file__])
