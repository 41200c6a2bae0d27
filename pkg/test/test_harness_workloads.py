#!/usr/bin/env python3
"""
Unit tests for safebetsim.harness.workloads module.
"""

import pytest

from safebetsim.allocator.lazy_free import LazyFreeConfig
from safebetsim.harness.workloads import (
    WORKLOADS,
    bitmask_stress,
    commit_stream_misses,
    deputy_benign,
    free_heavy,
    generate_workload,
    load_heavy,
    splinter,
    sweep_sizes,
    working_set,
)
from safebetsim.pipeline.core import run
from safebetsim.pipeline.policy import PolicyConfig
from safebetsim.smact.geometry import SmactGeometry
from safebetsim.trace.validate import validate_trace


class TestGenerateWorkload:
    """Test cases for generate_workload."""

    def test_names(self):
        assert set(WORKLOADS) == {
            "load_heavy",
            "high_locality",
            "bitmask_stress",
            "splinter",
            "deputy_benign",
            "working_set",
            "free_heavy",
        }

    def test_unknown(self):
        with pytest.raises(ValueError, match="unknown workload"):
            generate_workload("spec2017")

    def test_ops_scales_length(self):
        short = generate_workload("load_heavy", seed=1, ops=200)
        longer = generate_workload("load_heavy", seed=1, ops=800)
        assert len(longer) > len(short)

    def test_deterministic(self):
        assert load_heavy(seed=4, ops=300) == load_heavy(seed=4, ops=300)

    @pytest.mark.parametrize(
        "name", ["load_heavy", "high_locality", "bitmask_stress", "splinter", "deputy_benign"]
    )
    def test_valid(self, name):
        trace = generate_workload(name, seed=2, ops=400)
        assert validate_trace(trace) == []
        assert not trace.header.secrets

    def test_wrong_path_runs_are_closed(self):
        for seed in range(30):
            trace = load_heavy(seed=seed, ops=60)
            assert not trace.ops[-1].wrong_path, seed
            assert validate_trace(trace) == [], seed


class TestFreeHeavy:
    """Test cases for the allocator workload."""

    def test_header_records_thresholds(self):
        trace = free_heavy(seed=0, frees=50, lazy_free=LazyFreeConfig(max_count=10))
        assert trace.header.heap.max_count == 10

    def test_run_follows_the_header(self):
        trace = free_heavy(seed=0, frees=50, lazy_free=LazyFreeConfig(max_count=10))
        stats = run(trace, PolicyConfig.safebet_policy())
        # batches of 11 at frees 11, 22, 33 and 44, then the drain
        assert stats.handler_invocations == 5


class TestDeputyBenign:
    """Test cases for the owner-utility workload."""

    def test_owner_inherits_every_buffer_chunk(self):
        trace = deputy_benign(seed=0, calls=2, chunks=4)
        stats = run(trace, PolicyConfig.safebet_policy())
        assert stats.smact.inheritance_hits == 2 * 4
        assert stats.smact.miss_instance == 0


class TestCommitStreamMisses:
    """Test cases for commit_stream_misses."""

    def test_bitmask_halves_misses(self):
        trace = bitmask_stress(seed=0)
        geometry = SmactGeometry()
        with_mask = commit_stream_misses(trace, geometry)
        without = commit_stream_misses(trace, geometry.without_bitmask())
        assert without >= 2 * with_mask

    def test_each_chunk_misses_once_when_unbounded(self):
        trace = bitmask_stress(seed=0, slabs=16, chunks_per_slab=4, passes=2)
        geometry = SmactGeometry(unbounded=True)
        assert commit_stream_misses(trace, geometry) == 16 * 4

    def test_monotone_in_size(self):
        trace = working_set(seed=1, kib=1024, rounds=2, per_round=1024)
        misses = [commit_stream_misses(trace, g) for g in sweep_sizes()]
        assert misses == sorted(misses, reverse=True)


class TestSweepSizes:
    """Test cases for sweep_sizes."""

    def test_defaults(self):
        assert [g.label() for g in sweep_sizes()] == [
            "128x8-4096/64",
            "512x8-4096/64",
            "2048x8-4096/64",
        ]


class TestSplinter:
    """Test cases for the instruction-source splintering workload."""

    def test_instruction_sources_miss_more(self):
        trace = splinter(seed=0)
        region = run(trace, PolicyConfig.safebet_policy())
        insn = run(trace, PolicyConfig.parse("safebet-insn-source"))
        assert insn.smact.total_miss >= 4 * region.smact.total_miss


if __name__ == "__main__":
    pytest.main([__file__])
