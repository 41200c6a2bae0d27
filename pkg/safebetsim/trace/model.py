"""
Trace data model.

A trace is an immutable program-order list of micro-ops plus a header that
declares code regions, data ranges (the sandbox map), secret bytes and the
allocator arena. Wrong-path ops are explicit: they follow the mispredicted
control op that fetched them and never commit.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, Iterator, Optional, Tuple, Union

REGION_SIZE = 1 << 30
ADDRESS_MASK = (1 << 64) - 1


class OpKind(str, Enum):
    LOAD = "load"
    STORE = "store"
    BRANCH = "branch"
    CALL = "call"
    RETURN = "return"
    ALU = "alu"
    FENCE = "fence"
    # directive lines are kept apart in Trace.directives
    DIRECTIVE = "directive"


class DirectiveKind(str, Enum):
    MALLOC = "malloc"
    FREE = "free"
    SET_OWNER = "set-owner"


class UndeclaredRegionError(KeyError):
    """A pc fell outside every region declared in the trace header."""

    def __init__(self, pc: int):
        super().__init__(f"pc 0x{pc:x} is outside all declared regions")
        self.pc = pc


@dataclass(frozen=True)
class BranchInfo:
    predicted_taken: bool
    actual_taken: bool
    resolve_after: int
    shadow: Optional[int] = None

    @property
    def mispredicted(self) -> bool:
        return self.predicted_taken != self.actual_taken


@dataclass(frozen=True)
class MemRef:
    addr: int
    size: int


@dataclass(frozen=True)
class MicroOp:
    seq: int
    kind: OpKind
    pc: int
    mem: Optional[MemRef] = None
    src_regs: Tuple[str, ...] = ()
    dst_reg: Optional[str] = None
    branch_info: Optional[BranchInfo] = None
    target: Optional[int] = None
    wrong_path: bool = False
    secret_tag: bool = False

    @property
    def eff_addr(self) -> Optional[int]:
        return self.mem.addr if self.mem else None

    @property
    def is_memory(self) -> bool:
        return self.kind in (OpKind.LOAD, OpKind.STORE)

    @property
    def is_transfer(self) -> bool:
        return self.kind in (OpKind.CALL, OpKind.RETURN)

    @property
    def mispredicted(self) -> bool:
        return self.branch_info is not None and self.branch_info.mispredicted


@dataclass(frozen=True)
class Directive:
    kind: DirectiveKind
    arg: int
    # number of ops that precede the directive in the file
    position: int
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Region:
    id: int
    base: int
    is_owner: bool = False


@dataclass(frozen=True)
class DataRange:
    lo: int
    hi: int
    region: int

    def contains(self, addr: int, size: int = 1) -> bool:
        return self.lo <= addr and addr + size <= self.hi


@dataclass(frozen=True)
class SecretRange:
    addr: int
    length: int

    def overlaps(self, addr: int, size: int) -> bool:
        return addr < self.addr + self.length and self.addr < addr + size


@dataclass(frozen=True)
class HeapArena:
    """Allocator arena and the lazy-free thresholds its handles were computed with.

    Thresholds left as None fall back to the run's allocator configuration.
    """

    lo: int
    hi: int
    max_count: Optional[int] = None
    max_bytes: Optional[int] = None


class RegionMap:
    """Pure bit-slicing map from a pc's upper bits to its declared region."""

    def __init__(self, regions: Iterable[Region], region_size: int = REGION_SIZE):
        if region_size <= 0 or region_size & (region_size - 1):
            raise ValueError(f"region size {region_size} is not a power of two")
        self.region_size = region_size
        self.shift = region_size.bit_length() - 1
        self.by_block: Dict[int, Region] = {}
        self.by_id: Dict[int, Region] = {}
        for region in regions:
            if region.base % region_size:
                raise ValueError(
                    f"region {region.id} base 0x{region.base:x} is not "
                    f"{region_size}-byte aligned"
                )
            self.by_block[region.base >> self.shift] = region
            self.by_id[region.id] = region

    def __len__(self) -> int:
        return len(self.by_id)

    def lookup(self, pc: int) -> Region:
        try:
            return self.by_block[(pc & ADDRESS_MASK) >> self.shift]
        except KeyError:
            raise UndeclaredRegionError(pc) from None

    def contains(self, pc: int) -> bool:
        return ((pc & ADDRESS_MASK) >> self.shift) in self.by_block


@dataclass(frozen=True)
class TraceHeader:
    regions: Tuple[Region, ...] = ()
    data: Tuple[DataRange, ...] = ()
    secrets: Tuple[SecretRange, ...] = ()
    heap: Optional[HeapArena] = None
    region_size: int = REGION_SIZE
    _map: Optional[RegionMap] = field(
        default=None, init=False, repr=False, compare=False, hash=False
    )

    @property
    def owner(self) -> Optional[int]:
        for region in self.regions:
            if region.is_owner:
                return region.id
        return None

    @property
    def region_map(self) -> RegionMap:
        if self._map is None:
            object.__setattr__(self, "_map", RegionMap(self.regions, self.region_size))
        return self._map  # type: ignore[return-value]

    def region_ids(self) -> Tuple[int, ...]:
        return tuple(r.id for r in self.regions)

    def data_range_of(self, addr: int, size: int = 1) -> Optional[DataRange]:
        for rng in self.data:
            if rng.contains(addr, size):
                return rng
        return None

    def is_secret(self, addr: int, size: int = 1) -> bool:
        return any(s.overlaps(addr, size) for s in self.secrets)

    @property
    def secret_addresses(self) -> Tuple[SecretRange, ...]:
        return self.secrets


@dataclass(frozen=True)
class Trace:
    header: TraceHeader
    ops: Tuple[MicroOp, ...] = ()
    directives: Tuple[Directive, ...] = ()

    def __len__(self) -> int:
        return len(self.ops)

    def events(self) -> Iterator[Union[MicroOp, Directive]]:
        """Yield ops and directives interleaved in file order."""
        pending = sorted(self.directives, key=lambda d: d.position)
        d = 0
        for index, op in enumerate(self.ops):
            while d < len(pending) and pending[d].position <= index:
                yield pending[d]
                d += 1
            yield op
        while d < len(pending):
            yield pending[d]
            d += 1

    def committed_ops(self) -> Iterator[MicroOp]:
        return (op for op in self.ops if not op.wrong_path)


def region_of(pc: int, regions: Union[RegionMap, TraceHeader, Iterable[Region]]) -> Region:
    """Return the declared region whose aligned block contains ``pc``."""
    if isinstance(regions, TraceHeader):
        region_map = regions.region_map
    elif isinstance(regions, RegionMap):
        region_map = regions
    else:
        region_map = RegionMap(regions)
    if not len(region_map):
        raise ValueError("region map is empty")
    return region_map.lookup(pc)
