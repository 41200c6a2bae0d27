"""
Programmatic trace construction.

The builder keeps a cursor region whose pcs advance by one instruction per
emitted op, so generators only say *where* code runs. Heap directives are
mirrored through a private allocator so callers get the addresses the
simulated allocator will hand out.
"""

from contextlib import contextmanager
from typing import Dict, Iterator, List, Optional, Sequence

from safebetsim.allocator.lazy_free import LazyFreeAllocator, LazyFreeConfig
from safebetsim.trace.model import (
    REGION_SIZE,
    BranchInfo,
    DataRange,
    Directive,
    DirectiveKind,
    HeapArena,
    MemRef,
    MicroOp,
    OpKind,
    Region,
    SecretRange,
    Trace,
    TraceHeader,
)

INSN_BYTES = 4
CODE_OFFSET = 0x1000


class TraceBuilder:
    def __init__(self, region_size: int = REGION_SIZE):
        self.region_size = region_size
        self._regions: Dict[int, Region] = {}
        self._data: List[DataRange] = []
        self._secrets: List[SecretRange] = []
        self._heap: Optional[HeapArena] = None
        self._allocator: Optional[LazyFreeAllocator] = None
        self._ops: List[MicroOp] = []
        self._directives: List[Directive] = []
        self._pcs: Dict[int, int] = {}
        self._cursor: Optional[int] = None
        self._wrong_path = False

    # -- header -------------------------------------------------------------

    def add_region(self, rid: int, owner: bool = False) -> Region:
        if rid in self._regions:
            raise ValueError(f"region {rid} declared twice")
        region = Region(rid, (rid + 1) * self.region_size, owner)
        self._regions[rid] = region
        self._pcs[rid] = region.base + CODE_OFFSET
        if self._cursor is None:
            self._cursor = rid
        return region

    def add_data(self, region: int, lo: int, size: int) -> DataRange:
        rng = DataRange(lo, lo + size, region)
        self._data.append(rng)
        return rng

    def add_secret(self, addr: int, length: int = 1) -> SecretRange:
        secret = SecretRange(addr, length)
        self._secrets.append(secret)
        return secret

    def set_heap(self, lo: int, hi: int, config: Optional[LazyFreeConfig] = None) -> None:
        """Declare the arena; the thresholds go into the header with it."""
        config = config or LazyFreeConfig()
        self._heap = HeapArena(lo, hi, config.max_count, config.max_bytes)
        self._allocator = LazyFreeAllocator(lo, hi, config)

    # -- cursor ---------------------------------------------------------------

    def at(self, region: int) -> "TraceBuilder":
        if region not in self._regions:
            raise KeyError(f"region {region} is not declared")
        self._cursor = region
        return self

    @property
    def region(self) -> int:
        if self._cursor is None:
            raise RuntimeError("no region declared")
        return self._cursor

    def peek_pc(self, region: Optional[int] = None) -> int:
        return self._pcs[self.region if region is None else region]

    def _take_pc(self) -> int:
        pc = self._pcs[self.region]
        self._pcs[self.region] = pc + INSN_BYTES
        return pc

    @contextmanager
    def speculate(self, region: Optional[int] = None) -> Iterator["TraceBuilder"]:
        """Emit a wrong-path run behind the last (mispredicted) op."""
        if not self._ops or not self._ops[-1].mispredicted:
            raise ValueError("a wrong-path run must follow a mispredicted op")
        saved = self._cursor
        if region is not None:
            self.at(region)
        self._wrong_path = True
        try:
            yield self
        finally:
            self._wrong_path = False
            self._cursor = saved

    # -- ops --------------------------------------------------------------------

    def emit(self, kind: OpKind, pc: Optional[int] = None, **fields) -> MicroOp:
        op = MicroOp(
            seq=len(self._ops),
            kind=kind,
            pc=self._take_pc() if pc is None else pc,
            wrong_path=self._wrong_path,
            **fields,
        )
        self._ops.append(op)
        return op

    def alu(self, dst: Optional[str] = None, *srcs: str) -> MicroOp:
        return self.emit(OpKind.ALU, dst_reg=dst, src_regs=tuple(srcs))

    def filler(self, count: int, dst: str = "rf") -> None:
        """Independent single-cycle ops."""
        for _ in range(count):
            self.emit(OpKind.ALU, dst_reg=dst)

    def load(
        self,
        addr: int,
        dst: Optional[str] = None,
        srcs: Sequence[str] = (),
        size: int = 8,
        secret: bool = False,
        pc: Optional[int] = None,
    ) -> MicroOp:
        return self.emit(
            OpKind.LOAD,
            pc=pc,
            mem=MemRef(addr, size),
            dst_reg=dst,
            src_regs=tuple(srcs),
            secret_tag=secret,
        )

    def store(self, addr: int, srcs: Sequence[str] = (), size: int = 8) -> MicroOp:
        return self.emit(OpKind.STORE, mem=MemRef(addr, size), src_regs=tuple(srcs))

    def fence(self) -> MicroOp:
        return self.emit(OpKind.FENCE)

    def branch(
        self,
        srcs: Sequence[str] = (),
        resolve: int = 1,
        mispredict: bool = False,
        taken: bool = True,
    ) -> MicroOp:
        info = BranchInfo(
            predicted_taken=(not taken) if mispredict else taken,
            actual_taken=taken,
            resolve_after=resolve,
        )
        return self.emit(OpKind.BRANCH, branch_info=info, src_regs=tuple(srcs))

    def _transfer(
        self,
        kind: OpKind,
        to_region: int,
        srcs: Sequence[str],
        resolve: Optional[int],
        mispredict: bool,
    ) -> MicroOp:
        info = None
        if mispredict or resolve is not None:
            info = BranchInfo(
                predicted_taken=not mispredict,
                actual_taken=True,
                resolve_after=1 if resolve is None else resolve,
            )
        op = self.emit(
            kind,
            target=self.peek_pc(to_region),
            branch_info=info,
            src_regs=tuple(srcs),
        )
        if not self._wrong_path:
            self.at(to_region)
        return op

    def call(
        self,
        to_region: int,
        srcs: Sequence[str] = (),
        resolve: Optional[int] = None,
        mispredict: bool = False,
    ) -> MicroOp:
        """Call into ``to_region``; the cursor follows on the correct path."""
        return self._transfer(OpKind.CALL, to_region, srcs, resolve, mispredict)

    def ret(
        self,
        to_region: int,
        srcs: Sequence[str] = (),
        resolve: Optional[int] = None,
        mispredict: bool = False,
    ) -> MicroOp:
        return self._transfer(OpKind.RETURN, to_region, srcs, resolve, mispredict)

    # -- directives ----------------------------------------------------------

    def _directive(self, kind: DirectiveKind, arg: int) -> Directive:
        if self._wrong_path:
            raise ValueError("directives cannot appear on the wrong path")
        directive = Directive(kind, arg, len(self._ops))
        self._directives.append(directive)
        return directive

    def malloc(self, size: int) -> int:
        if self._allocator is None:
            raise ValueError("malloc needs a heap arena")
        self._directive(DirectiveKind.MALLOC, size)
        return self._allocator.malloc64(size)

    def free(self, addr: int) -> None:
        if self._allocator is None:
            raise ValueError("free needs a heap arena")
        self._directive(DirectiveKind.FREE, addr)
        invocation = self._allocator.lazy_free(addr)
        if invocation is not None:
            self._allocator.reclaim(invocation)

    def set_owner(self, region: int) -> None:
        self._directive(DirectiveKind.SET_OWNER, region)

    # -- result ---------------------------------------------------------------

    def __len__(self) -> int:
        return len(self._ops)

    @property
    def ends_in_wrong_path(self) -> bool:
        return bool(self._ops) and self._ops[-1].wrong_path

    def build(self) -> Trace:
        header = TraceHeader(
            regions=tuple(sorted(self._regions.values(), key=lambda r: r.id)),
            data=tuple(self._data),
            secrets=tuple(self._secrets),
            heap=self._heap,
            region_size=self.region_size,
        )
        return Trace(header=header, ops=tuple(self._ops), directives=tuple(self._directives))
