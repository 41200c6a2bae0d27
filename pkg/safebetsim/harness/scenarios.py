"""
Attack scenario generators.

Every scenario declares one owner region, exactly one secret range and a
wrong-path window that is long enough for the access and the dependent
transmit to issue under an unprotected core. Before the window opens the
attacker runs for longer than the ROB holds, so every earlier access and
region crossing has committed: the permissions the attack relies on (or is
denied) are in place regardless of policy timing. Addresses, filler lengths,
branch resolution latencies and the secret byte vary with the seed.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, List, Optional

import numpy as np

from safebetsim.allocator.lazy_free import MAX_PENDING_BYTES, MAX_PENDING_COUNT, LazyFreeConfig
from safebetsim.trace.model import Trace
from safebetsim.trace.validate import validate_trace

from .builder import TraceBuilder

DATA_BASE = 0x40_0000_0000
PROBE_STRIDE = 64
# out-of-bounds index of the classic bounds-check-bypass gadget
OOB_INDEX = 1048557
HEAP_SPAN = 64 * 1024 * 1024
# more ops than any default ROB holds
SETTLE = 256


class ScenarioError(ValueError):
    """The scenario parameters cannot produce a consistent trace."""


class ScenarioKind(str, Enum):
    SPECTRE_V1 = "spectre_v1"
    SPECTRE_V1_1 = "spectre_v1_1"
    SPECTRE_V2 = "spectre_v2"
    SPECTRE_RSB = "spectre_rsb"
    SPECTRE_V4 = "spectre_v4"
    CONFUSED_DEPUTY = "confused_deputy"
    STALE_PERMISSION = "stale_permission"


@dataclass(frozen=True)
class ScenarioSpec:
    kind: ScenarioKind
    secret_byte: Optional[int] = None
    array_len: int = 16
    mistrain_iters: int = 5
    seed: int = 0
    free_max_count: int = MAX_PENDING_COUNT
    free_max_bytes: int = MAX_PENDING_BYTES

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", ScenarioKind(self.kind))
        except ValueError:
            raise ScenarioError(f"unknown scenario kind {self.kind!r}") from None
        if self.secret_byte is not None and not 0 <= self.secret_byte <= 255:
            raise ScenarioError(f"secret byte {self.secret_byte} does not fit a byte")
        if self.mistrain_iters < 1:
            raise ScenarioError("at least one mistraining iteration is needed")
        if self.array_len < self.mistrain_iters:
            raise ScenarioError(
                f"array_len {self.array_len} is shorter than the "
                f"{self.mistrain_iters} in-bounds training indices"
            )
        if self.free_max_bytes <= 0:
            raise ScenarioError("free_max_bytes must be positive")
        if self.free_max_count < 0:
            raise ScenarioError("free_max_count must be non-negative")

    @property
    def lazy_free(self) -> LazyFreeConfig:
        return LazyFreeConfig(max_count=self.free_max_count, max_bytes=self.free_max_bytes)


class _Layout:
    """Randomized per-scenario addresses and latencies."""

    def __init__(self, spec: ScenarioSpec):
        self.rng = np.random.default_rng(spec.seed)
        rng = self.rng
        self.secret = (
            int(rng.integers(1, 256)) if spec.secret_byte is None else spec.secret_byte
        )
        self.resolve = int(rng.integers(400, 601))
        base = DATA_BASE + int(rng.integers(0, 256)) * 0x10_0000
        self.len_addr = base
        self.array = base + 0x1000
        self.probe = base + 0x2_0000
        self.foreign = base + 0x100_0000

    def filler(self, low: int = 2, high: int = 12) -> int:
        return int(self.rng.integers(low, high))

    def settle(self) -> int:
        return self.filler(SETTLE, SETTLE + 32)

    def probe_addr(self, value: int) -> int:
        return self.probe + PROBE_STRIDE * value


def _victim_array(b: TraceBuilder, lay: _Layout, spec: ScenarioSpec, region: int) -> None:
    b.add_data(region, lay.len_addr, 8)
    b.add_data(region, lay.array, spec.array_len)
    b.add_data(region, lay.probe, 256 * PROBE_STRIDE)


def _mistrain(b: TraceBuilder, lay: _Layout, spec: ScenarioSpec) -> None:
    """In-bounds committed iterations of the bounds-checked gadget."""
    for i in range(spec.mistrain_iters):
        b.load(lay.len_addr, "rlen")
        b.alu("rcmp", "rlen")
        b.branch(["rcmp"], resolve=int(lay.rng.integers(1, 8)))
        b.load(lay.array + i, "t1", size=1)
        value = int(lay.rng.integers(0, 256))
        b.load(lay.probe_addr(value), "t2", ["t1"], size=1)
        b.filler(lay.filler())


def _transmit(b: TraceBuilder, lay: _Layout, addr: int) -> None:
    b.load(addr, "s", size=1, secret=True)
    b.load(lay.probe_addr(lay.secret), "leak", ["s"], size=1)


def _spectre_v1(spec: ScenarioSpec, lay: _Layout) -> TraceBuilder:
    b = TraceBuilder()
    b.add_region(0, owner=True)
    victim = b.add_region(1).id
    b.at(victim)
    _victim_array(b, lay, spec, victim)
    secret = lay.array + OOB_INDEX
    b.add_data(0, secret & ~0xFFF, 0x1000)
    b.add_secret(secret)

    _mistrain(b, lay, spec)
    b.load(lay.len_addr, "rlen")
    b.alu("rcmp", "rlen")
    b.branch(["rcmp"], resolve=lay.resolve, mispredict=True, taken=False)
    with b.speculate():
        b.load(secret, "s", ["rcmp"], size=1, secret=True)
        b.load(lay.probe_addr(lay.secret), "leak", ["s"], size=1)
    b.filler(lay.filler())
    return b


def _spectre_v1_1(spec: ScenarioSpec, lay: _Layout) -> TraceBuilder:
    b = TraceBuilder()
    b.add_region(0, owner=True)
    victim = b.add_region(1).id
    b.at(victim)
    _victim_array(b, lay, spec, victim)
    secret = lay.array + OOB_INDEX
    b.add_data(0, secret & ~0xFFF, 0x1000)
    b.add_secret(secret)

    _mistrain(b, lay, spec)
    b.store(lay.len_addr, ["rlen"])
    b.alu("rx")
    b.branch(["rx"], resolve=lay.resolve, mispredict=True, taken=False)
    with b.speculate():
        # speculative store widens the bound, the check reads it back forwarded
        b.alu("rbig")
        b.store(lay.len_addr, ["rbig"])
        b.load(lay.len_addr, "rlen2", ["rbig"])
        b.alu("rcmp2", "rlen2")
        b.load(secret, "s", ["rcmp2"], size=1, secret=True)
        b.load(lay.probe_addr(lay.secret), "leak", ["s"], size=1)
    b.filler(lay.filler())
    return b


def _poisoned_transfer(spec: ScenarioSpec, lay: _Layout, use_return: bool) -> TraceBuilder:
    b = TraceBuilder()
    b.add_region(0, owner=True)
    victim = b.add_region(1).id
    attacker = b.add_region(2).id
    secret = lay.foreign
    b.add_data(victim, secret, 64)
    b.add_data(attacker, lay.probe, 256 * PROBE_STRIDE)
    b.add_secret(secret)

    b.at(victim)
    b.load(secret, "key", size=1)
    b.alu("use", "key")
    b.filler(lay.filler())
    b.call(attacker)
    b.filler(lay.settle())
    b.alu("rx")
    transfer = b.ret if use_return else b.call
    # predicted target is victim code; the real target stays in the attacker
    transfer(attacker, ["rx"], resolve=lay.resolve, mispredict=True)
    with b.speculate(region=victim):
        b.filler(lay.filler(1, 4))
        _transmit(b, lay, secret)
    b.filler(lay.filler())
    return b


def _spectre_v4(spec: ScenarioSpec, lay: _Layout) -> TraceBuilder:
    b = TraceBuilder()
    b.add_region(0, owner=True)
    attacker = b.add_region(1).id
    slot = lay.foreign
    ptr = lay.len_addr
    b.add_data(0, slot, 64)
    b.add_data(attacker, ptr, 8)
    b.add_data(attacker, lay.probe, 256 * PROBE_STRIDE)
    b.add_secret(slot)

    b.at(attacker)
    b.load(ptr, "p")
    b.alu("pv", "p")
    # sanitizing store whose address resolves late
    b.store(slot, ["pv"])
    b.alu("rx")
    b.branch(["rx"], resolve=lay.resolve, mispredict=True, taken=False)
    with b.speculate():
        b.filler(lay.filler(1, 4))
        _transmit(b, lay, slot)
    b.filler(lay.filler())
    return b


def _confused_deputy(spec: ScenarioSpec, lay: _Layout) -> TraceBuilder:
    b = TraceBuilder()
    owner = b.add_region(0, owner=True).id
    first = b.add_region(1).id
    second = b.add_region(2).id
    key = lay.foreign
    b.add_data(owner, key, 64)
    b.add_data(second, lay.probe, 256 * PROBE_STRIDE)
    b.add_secret(key)

    # first visitor uses the utility, which loads the key non-speculatively
    b.at(first)
    b.filler(lay.filler())
    b.call(owner)
    b.load(key, "k", size=1)
    b.alu("enc", "k")
    b.filler(lay.filler())
    b.ret(first)
    b.filler(lay.filler())

    # second visitor reaches the utility through a callback chain
    b.call(owner)
    b.filler(lay.filler())
    b.call(second)
    b.filler(lay.filler())
    b.call(owner)
    b.filler(lay.settle())
    b.alu("rx")
    b.branch(["rx"], resolve=lay.resolve, mispredict=True, taken=False)
    with b.speculate():
        _transmit(b, lay, key)
    b.filler(lay.filler())
    return b


def _stale_permission(spec: ScenarioSpec, lay: _Layout) -> TraceBuilder:
    b = TraceBuilder()
    owner = b.add_region(0, owner=True).id
    attacker = b.add_region(1).id
    heap_lo = DATA_BASE + 0x1000_0000
    b.set_heap(heap_lo, heap_lo + HEAP_SPAN, spec.lazy_free)
    b.add_data(owner, heap_lo, HEAP_SPAN)
    b.add_data(attacker, lay.probe, 256 * PROBE_STRIDE)
    size = spec.free_max_bytes + 64

    b.at(attacker)
    b.call(owner)
    chunk = b.malloc(size)
    b.filler(lay.filler())
    b.ret(attacker)
    b.load(chunk, "old", size=1)
    b.filler(lay.filler())

    # the free crosses the batch threshold and triggers revocation
    b.call(owner)
    b.free(chunk)
    b.filler(lay.filler())
    b.ret(attacker)

    b.call(owner)
    again = b.malloc(size)
    if again != chunk:
        raise ScenarioError("reallocation did not reuse the freed chunk")
    b.alu("sv")
    b.store(again, ["sv"], size=1)
    b.filler(lay.filler())
    b.ret(attacker)
    b.add_secret(again)

    b.filler(lay.settle())
    b.alu("rx")
    b.branch(["rx"], resolve=lay.resolve, mispredict=True, taken=False)
    with b.speculate():
        _transmit(b, lay, again)
    b.filler(lay.filler())
    return b


_GENERATORS: Dict[ScenarioKind, Callable[[ScenarioSpec, _Layout], TraceBuilder]] = {
    ScenarioKind.SPECTRE_V1: _spectre_v1,
    ScenarioKind.SPECTRE_V1_1: _spectre_v1_1,
    ScenarioKind.SPECTRE_V2: lambda spec, lay: _poisoned_transfer(spec, lay, use_return=False),
    ScenarioKind.SPECTRE_RSB: lambda spec, lay: _poisoned_transfer(spec, lay, use_return=True),
    ScenarioKind.SPECTRE_V4: _spectre_v4,
    ScenarioKind.CONFUSED_DEPUTY: _confused_deputy,
    ScenarioKind.STALE_PERMISSION: _stale_permission,
}


def scenario_kinds() -> List[str]:
    return [k.value for k in ScenarioKind]


def generate(spec: ScenarioSpec) -> Trace:
    """Build the trace for ``spec``; raises ScenarioError if it does not validate."""
    trace = _GENERATORS[spec.kind](spec, _Layout(spec)).build()
    problems = validate_trace(trace)
    if problems:
        raise ScenarioError(
            f"{spec.kind.value} (seed {spec.seed}) produced an invalid trace: {problems[0]}"
        )
    return trace
