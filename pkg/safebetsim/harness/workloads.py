"""
Benign synthetic workloads for the performance surface.

Warm-up accesses are spaced by more ops than the ROB holds, so the first
touch of every chunk has committed (and its permission is visible) before
the chunk is touched again. That keeps permission-table miss counts a
property of the access stream rather than of timing.
"""

from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from safebetsim.allocator.lazy_free import LazyFreeConfig
from safebetsim.smact.geometry import SmactGeometry
from safebetsim.smact.table import Smact
from safebetsim.trace.model import OpKind, Trace

from .builder import TraceBuilder
from .scenarios import DATA_BASE, SETTLE

CHUNK = 64
SLAB = 4096


def _single_region(data_bytes: int) -> TraceBuilder:
    b = TraceBuilder()
    b.add_region(0, owner=True)
    b.add_region(1)
    b.at(1)
    b.add_data(1, DATA_BASE, data_bytes)
    return b


def _warm(b: TraceBuilder, addrs: Sequence[int]) -> None:
    for addr in addrs:
        b.load(addr, "w")
        b.filler(SETTLE)


def _chains(
    b: TraceBuilder,
    rng: np.random.Generator,
    addrs: Sequence[int],
    ops: int,
    chains: int = 4,
    branch_every: int = 24,
    resolve: int = 30,
    mispredict_rate: float = 0.0,
) -> None:
    """Pointer-chasing load/ALU chains.

    Every ``branch_every`` steps a branch on the current chain value resolves
    ``resolve`` cycles after it issues.
    """
    emitted = 0
    step = 0
    while emitted < ops:
        c = step % chains
        addr = addrs[int(rng.integers(0, len(addrs)))]
        b.load(addr, f"v{c}", [f"p{c}"])
        b.alu(f"p{c}", f"v{c}")
        emitted += 2
        step += 1
        if step % branch_every == 0:
            mispredict = bool(rng.random() < mispredict_rate)
            b.branch([f"p{c}"], resolve=resolve, mispredict=mispredict)
            emitted += 1
            if mispredict:
                with b.speculate():
                    for _ in range(int(rng.integers(2, 6))):
                        wp = addrs[int(rng.integers(0, len(addrs)))]
                        b.load(wp, "x", ["x"])
                        emitted += 1
        if rng.random() < 0.1:
            b.store(addrs[int(rng.integers(0, len(addrs)))], [f"p{c}"])
            emitted += 1
    if b.ends_in_wrong_path:
        b.alu("x")


def load_heavy(seed: int = 0, ops: int = 3000, chunks: int = 32) -> Trace:
    rng = np.random.default_rng(seed)
    b = _single_region(chunks * CHUNK)
    addrs = [DATA_BASE + i * CHUNK for i in range(chunks)]
    _warm(b, addrs)
    _chains(b, rng, addrs, ops, mispredict_rate=0.2)
    return b.build()


def high_locality(seed: int = 0, ops: int = 40_000, chunks: int = 8) -> Trace:
    rng = np.random.default_rng(seed)
    b = _single_region(chunks * CHUNK)
    addrs = [DATA_BASE + i * CHUNK for i in range(chunks)]
    _warm(b, addrs)
    _chains(b, rng, addrs, ops)
    return b.build()


def bitmask_stress(seed: int = 0, slabs: int = 256, chunks_per_slab: int = 8, passes: int = 3) -> Trace:
    """Several chunks of many slabs, revisited over a few passes."""
    rng = np.random.default_rng(seed)
    b = _single_region(slabs * SLAB)
    for _ in range(passes):
        for slab in rng.permutation(slabs):
            base = DATA_BASE + int(slab) * SLAB
            for chunk in range(chunks_per_slab):
                b.load(base + chunk * CHUNK, "v")
        b.filler(SETTLE)
    return b.build()


def splinter(seed: int = 0, pcs: int = 8, chunks: int = 64, reps: int = 2) -> Trace:
    """Many static loads in one region reading the same destinations."""
    rng = np.random.default_rng(seed)
    b = _single_region(chunks * CHUNK)
    sites = [b.peek_pc() + 0x10_0000 + i * 0x100 for i in range(pcs)]
    for _ in range(reps):
        for site in sites:
            for chunk in rng.permutation(chunks):
                b.load(DATA_BASE + int(chunk) * CHUNK, "v", pc=site)
            b.filler(SETTLE)
    return b.build()


def deputy_benign(seed: int = 0, calls: int = 16, chunks: int = 8) -> Trace:
    """One visitor repeatedly hands its buffer to an owner utility."""
    rng = np.random.default_rng(seed)
    b = TraceBuilder()
    owner = b.add_region(0, owner=True).id
    visitor = b.add_region(1).id
    b.at(visitor)
    b.add_data(visitor, DATA_BASE, chunks * CHUNK)
    addrs = [DATA_BASE + i * CHUNK for i in range(chunks)]
    _warm(b, addrs)
    for _ in range(calls):
        b.call(owner)
        # the crossing commits before the utility touches the buffer
        b.filler(SETTLE)
        for addr in rng.permutation(addrs):
            b.load(int(addr), "u", ["acc"])
            b.alu("acc", "u")
        b.filler(int(rng.integers(4, 16)))
        b.ret(visitor)
        b.filler(SETTLE)
    return b.build()


def working_set(seed: int = 0, kib: int = 512, rounds: int = 4, per_round: int = 2048) -> Trace:
    """Random chunk sweeps over a bounded footprint."""
    rng = np.random.default_rng(seed)
    size = kib * 1024
    total = size // CHUNK
    b = _single_region(size)
    for _ in range(rounds):
        picks = rng.choice(total, size=min(per_round, total), replace=False)
        for chunk in picks:
            b.load(DATA_BASE + int(chunk) * CHUNK, "v")
            b.alu("a", "v")
        b.filler(SETTLE)
    return b.build()


def free_heavy(
    seed: int = 0,
    frees: int = 25_001,
    max_size: int = 256,
    lazy_free: Optional[LazyFreeConfig] = None,
) -> Trace:
    """Allocate, touch and free small objects through the lazy-free allocator.

    Handles are computed with ``lazy_free`` thresholds, which the trace header records.
    """
    rng = np.random.default_rng(seed)
    b = TraceBuilder()
    b.add_region(0, owner=True)
    b.add_region(1)
    b.at(1)
    heap_lo = DATA_BASE + 0x1000_0000
    heap_hi = heap_lo + 256 * 1024 * 1024
    b.set_heap(heap_lo, heap_hi, lazy_free)
    b.add_data(1, heap_lo, heap_hi - heap_lo)
    for _ in range(frees):
        addr = b.malloc(int(rng.integers(1, max_size + 1)))
        b.alu("d")
        b.store(addr, ["d"])
        b.load(addr, "v")
        b.free(addr)
    return b.build()


WORKLOADS: Dict[str, Callable[..., Trace]] = {
    "load_heavy": load_heavy,
    "high_locality": high_locality,
    "bitmask_stress": bitmask_stress,
    "splinter": splinter,
    "deputy_benign": deputy_benign,
    "working_set": working_set,
    "free_heavy": free_heavy,
}


def generate_workload(
    name: str,
    seed: int = 0,
    ops: Optional[int] = None,
    lazy_free: Optional[LazyFreeConfig] = None,
) -> Trace:
    """Look up a workload by name; ``ops`` scales the ones that take a length.

    ``lazy_free`` sets the allocator thresholds of workloads that free memory.
    """
    try:
        factory = WORKLOADS[name]
    except KeyError:
        raise ValueError(f"unknown workload {name!r}") from None
    if ops is not None and name in ("load_heavy", "high_locality"):
        return factory(seed=seed, ops=ops)
    if name == "free_heavy":
        return factory(seed=seed, lazy_free=lazy_free)
    return factory(seed=seed)


def commit_stream_misses(trace: Trace, geometry: SmactGeometry) -> int:
    """Table misses when every committed access inserts immediately.

    Ignores pipeline timing entirely; each committed load is looked up and
    then recorded under its region, in program order.
    """
    smact = Smact(geometry)
    region_map = trace.header.region_map
    misses = 0
    for op in trace.committed_ops():
        if op.mem is None:
            continue
        region = region_map.lookup(op.pc).id
        if op.kind is OpKind.LOAD and not smact.lookup(op.mem.addr, region).hit:
            misses += 1
        smact.insert(op.mem.addr, region)
    return misses


def sweep_sizes(entries: Sequence[int] = (128, 512, 2048), ways: int = 8) -> List[SmactGeometry]:
    return [SmactGeometry(entries=n, ways=ways) for n in entries]
