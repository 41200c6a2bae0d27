"""
Trace-driven out-of-order core.

The model is event-time bookkeeping rather than a cycle loop: ops are visited
once in program order and each gets fetch, dispatch, issue, complete and
commit times derived from the older ops it depends on (operands, ROB and
issue-queue occupancy, fetch and commit width). Wrong-path ops following a
mispredicted control op are fetched and may issue until the op resolves;
they never commit and their register results are discarded.

Permission-table state changes (inserts and instance commits) are queued at
their commit time and applied before the first younger op dispatched at or
after that time, so a speculative lookup only sees committed history.
"""

from collections import deque
from dataclasses import dataclass, replace
from typing import Deque, Dict, List, Optional, Protocol, Sequence, Tuple

from safebetsim.allocator.lazy_free import (
    AllocatorError,
    HandlerInvocation,
    LazyFreeAllocator,
    LazyFreeConfig,
    RevocationHandler,
)
from safebetsim.instances.tracker import InstanceTracker, TransferKind
from safebetsim.memory.hierarchy import AccessKind, HierarchyConfig, MemoryHierarchy
from safebetsim.smact.geometry import SmactGeometry
from safebetsim.smact.table import LookupResult, Smact, Verdict
from safebetsim.trace.model import (
    Directive,
    DirectiveKind,
    HeapArena,
    MicroOp,
    OpKind,
    Trace,
    UndeclaredRegionError,
)
from safebetsim.utils.logger import get_logger

from .policy import (
    NEVER,
    CoreConfig,
    LoadAction,
    LoadState,
    LoadTiming,
    PolicyConfig,
    gate_load,
    source_key,
    wakeup_time,
)
from .stats import SimStats

_INSERT = "insert"
_TRANSFER = "transfer"


class SimulationError(RuntimeError):
    """A trace invariant broke mid-run; ``seq`` names the offending op."""

    def __init__(self, message: str, seq: Optional[int] = None):
        super().__init__(message if seq is None else f"op {seq}: {message}")
        self.seq = seq


class TaintObserver(Protocol):
    def observe(self, op: MicroOp, issued: bool, tainted_sources: Tuple[str, ...]) -> None:
        ...


@dataclass
class _Store:
    addr: int
    size: int
    issue: int
    commit: int
    data_ready: int
    tainted: bool

    def overlaps(self, addr: int, size: int) -> bool:
        return addr < self.addr + self.size and self.addr < addr + size


@dataclass
class _LoadOutcome:
    data: int
    tainted: bool
    verdict: Optional[Verdict] = None
    replay_done: Optional[int] = None

    @property
    def gated(self) -> bool:
        return self.replay_done is not None


class _Registers:
    """Per-register wake time and taint."""

    def __init__(self, ready: Optional[Dict[str, int]] = None, tainted: Optional[Dict[str, bool]] = None):
        self.ready: Dict[str, int] = ready or {}
        self.tainted: Dict[str, bool] = tainted or {}

    def fork(self) -> "_Registers":
        return _Registers(dict(self.ready), dict(self.tainted))

    def operands_ready(self, srcs: Sequence[str]) -> int:
        return max((self.ready.get(r, 0) for r in srcs), default=0)

    def tainted_sources(self, srcs: Sequence[str]) -> Tuple[str, ...]:
        return tuple(r for r in srcs if self.tainted.get(r, False))

    def write(self, reg: str, wake: int, tainted: bool) -> None:
        self.ready[reg] = wake
        self.tainted[reg] = tainted


def allocator_config(arena: HeapArena, configured: Optional[LazyFreeConfig]) -> LazyFreeConfig:
    """Run allocator settings with the thresholds the trace's handles were computed under.

    A trace that records its thresholds keeps them; the run configuration only
    fills in what the header leaves open, plus the handler cost.
    """
    config = configured or LazyFreeConfig()
    pinned = {
        name: value
        for name, value in (("max_count", arena.max_count), ("max_bytes", arena.max_bytes))
        if value is not None
    }
    overridden = {name for name, value in pinned.items() if getattr(config, name) != value}
    if overridden and configured is not None:
        get_logger("Pipeline").debug(
            f"Trace heap header overrides configured {', '.join(sorted(overridden))}"
        )
    return replace(config, **pinned)


def replay_at_commit(memory: MemoryHierarchy, addr: int, head: int, gate_done: int) -> int:
    """Re-access ``addr`` once a gated load is at the ROB head.

    ``head`` is when the load becomes the oldest op and ``gate_done`` when
    its permission verdict was known. An earlier fill that is still in
    flight is waited for; a completed one makes the replay an L1 hit.
    """
    start = max(head, gate_done)
    return start + memory.access(addr, AccessKind.LOAD, start).latency


class Pipeline:
    def __init__(
        self,
        trace: Trace,
        policy: PolicyConfig,
        core: Optional[CoreConfig] = None,
        geometry: Optional[SmactGeometry] = None,
        hierarchy: Optional[HierarchyConfig] = None,
        lazy_free: Optional[LazyFreeConfig] = None,
        smact: Optional[Smact] = None,
        monitor: Optional[TaintObserver] = None,
    ):
        self.logger = get_logger("Pipeline")
        self.trace = trace
        self.policy = policy
        self.core = core or CoreConfig()
        configured = geometry or (smact.geometry if smact is not None else SmactGeometry())
        self.smact = smact if smact is not None else Smact(policy.geometry_for(configured))
        self.memory = MemoryHierarchy(hierarchy)
        self.monitor = monitor
        self.stats = SimStats(policy=policy.label(), geometry=configured.label())

        header = trace.header
        self.regions = header.region_map
        self.tracker = InstanceTracker(self._entry_region(), owner=header.owner)

        self.allocator: Optional[LazyFreeAllocator] = None
        self.handler: Optional[RevocationHandler] = None
        if header.heap is not None:
            arena = header.heap
            self.allocator = LazyFreeAllocator(
                arena.lo, arena.hi, allocator_config(arena, lazy_free)
            )
            self.handler = RevocationHandler(
                self.allocator,
                self.smact,
                revoke=policy.is_safebet and policy.safebet.revocation_enabled,
                charge=policy.is_safebet and policy.safebet.charge_allocator,
            )

        levels = self.memory.config.levels
        self.l1_latency = levels[0].hit_latency if levels else self.memory.config.mem_latency

        width = self.core.width
        self.fetch_hist: Deque[int] = deque(maxlen=width)
        self.commit_hist: Deque[int] = deque(maxlen=width)
        self.iq_hist: Deque[int] = deque(maxlen=self.core.issueq)
        self.release_hist: Deque[int] = deque(maxlen=self.core.rob)
        self.last_fetch = 0
        self.last_dispatch = 0
        self.last_commit = 0
        self.fetch_floor = 0
        self.fence_barrier = 0
        self.max_complete = 0
        self.nonspec = 0

        self.regs = _Registers()
        self.stores: Deque[_Store] = deque(maxlen=self.core.rob)
        self.events: Deque[Tuple[int, str, tuple]] = deque()

    def _entry_region(self) -> int:
        for op in self.trace.ops:
            if not op.wrong_path:
                return self._region(op.pc, op.seq)
        regions = self.trace.header.regions
        return regions[0].id if regions else 0

    def _region(self, pc: int, seq: Optional[int]) -> int:
        try:
            return self.regions.lookup(pc).id
        except UndeclaredRegionError as e:
            raise SimulationError(e.args[0], seq) from e

    # -- resources -------------------------------------------------------

    def _fetch_time(self) -> int:
        t = max(self.last_fetch, self.fetch_floor)
        if len(self.fetch_hist) == self.fetch_hist.maxlen:
            t = max(t, self.fetch_hist[0] + 1)
        return t

    def _dispatch_time(self, fetch: int) -> int:
        t = max(fetch + self.core.frontend_depth, self.last_dispatch)
        if len(self.release_hist) == self.release_hist.maxlen:
            t = max(t, self.release_hist[0] + 1)
        if len(self.iq_hist) == self.iq_hist.maxlen:
            t = max(t, self.iq_hist[0] + 1)
        return t

    def _commit_time(self, complete: int) -> int:
        t = max(complete + 1, self.last_commit)
        if len(self.commit_hist) == self.commit_hist.maxlen:
            t = max(t, self.commit_hist[0] + 1)
        self.commit_hist.append(t)
        self.last_commit = t
        return t

    def _occupy(self, fetch: int, dispatch: int, issue: int, release: int) -> None:
        self.fetch_hist.append(fetch)
        self.last_fetch = fetch
        self.last_dispatch = dispatch
        self.iq_hist.append(min(issue, release))
        self.release_hist.append(release)

    # -- commit-time events ---------------------------------------------

    def _advance(self, now: int) -> None:
        events = self.events
        while events and events[0][0] <= now:
            _, kind, payload = events.popleft()
            if kind == _INSERT:
                self.smact.insert(*payload)
            else:
                self.tracker.on_commit_transfer(*payload)

    def _check_overflow(self) -> None:
        if self.tracker.take_overflow() is None:
            return
        self.smact.flush()
        self.events = deque(e for e in self.events if e[1] != _INSERT)
        self.stats.instance_overflows += 1

    def _decode_transfer(self, op: MicroOp, target: Optional[int], commit: Optional[int]) -> None:
        """Feed a region crossing to the tracker; ``commit`` None means wrong path."""
        if target is None:
            return
        src = self._region(op.pc, op.seq)
        dst = self._region(target, op.seq)
        if src == dst:
            return
        kind = TransferKind(op.kind.value)
        self.tracker.on_decode_transfer(kind, src, dst)
        self._check_overflow()
        if commit is not None:
            self.events.append((commit, _TRANSFER, (kind, src, dst)))

    # -- SMACT gate -------------------------------------------------------

    def _verdict(self, addr: int, tag: int, pc: int, region: int) -> Verdict:
        options = self.policy.safebet
        ctx = self.tracker.match_context()
        # an instance whose crossing has not committed holds no permissions yet
        if options.instances_enabled and tag != ctx.committed_tos:
            return Verdict.MISS_INSTANCE
        key = source_key(options, tag, pc, region)
        lbtos: Optional[int] = None
        is_owner = False
        if options.instances_enabled and options.inheritance_enabled and ctx.lbtos is not None:
            lbtos = source_key(options, ctx.lbtos, pc, region)
            is_owner = ctx.current_is_owner
        return self.smact.lookup(addr, key, lbtos, is_owner).verdict  # type: ignore[arg-type]

    def _count_verdict(self, verdict: Verdict) -> None:
        smact = self.stats.smact
        smact.lookups += 1
        if verdict is Verdict.HIT:
            smact.hits += 1
        elif verdict is Verdict.HIT_BY_INHERITANCE:
            smact.inheritance_hits += 1
        elif verdict is Verdict.MISS_SLAB:
            smact.miss_slab += 1
        elif verdict is Verdict.MISS_CHUNK:
            smact.miss_chunk += 1
        else:
            smact.miss_instance += 1

    def _forwarding_store(
        self, addr: int, size: int, issue: int, speculative: Sequence[_Store] = ()
    ) -> Optional[_Store]:
        for store in reversed(speculative):
            if store.issue <= issue and store.overlaps(addr, size):
                return store
        for store in reversed(self.stores):
            if store.issue <= issue < store.commit and store.overlaps(addr, size):
                return store
        return None

    # -- correct path -----------------------------------------------------

    def _load(self, op: MicroOp, issue: int, tag: int, region: int) -> _LoadOutcome:
        assert op.mem is not None
        addr, size = op.mem.addr, op.mem.size
        verdict: Optional[Verdict] = None
        action = LoadAction.ISSUE_NO_GATE
        if self.policy.is_safebet:
            verdict = self._verdict(addr, tag, op.pc, region)
            self._count_verdict(verdict)
            action = gate_load(self.policy, LoadState(LookupResult(verdict)))

        if action is LoadAction.ISSUE_FILL_ONLY_WAIT_COMMIT:
            self.memory.access(addr, AccessKind.FILL_ONLY, issue)
            if self._forwarding_store(addr, size, issue) is not None:
                self.stats.blocked_forwards += 1
            done = replay_at_commit(self.memory, addr, self.last_commit, issue + self.l1_latency)
            self.stats.smact.replays += 1
            return _LoadOutcome(done, op.secret_tag, verdict, replay_done=done)

        store = self._forwarding_store(addr, size, issue)
        if store is not None:
            self.stats.store_forwards += 1
            return _LoadOutcome(
                max(issue, store.data_ready) + 1, store.tainted or op.secret_tag, verdict
            )
        latency = self.memory.access(addr, AccessKind.LOAD, issue).latency
        return _LoadOutcome(issue + latency, op.secret_tag, verdict)

    def _correct_path(self, op: MicroOp) -> Tuple[int, int]:
        """Time one committing op; returns its (complete, commit) cycles."""
        fetch = self._fetch_time()
        dispatch = self._dispatch_time(fetch)
        self._advance(dispatch)

        tag = self.tracker.current
        region = self._region(op.pc, op.seq)
        srcs = op.src_regs
        operands = self.regs.operands_ready(srcs)
        tainted_srcs = self.regs.tainted_sources(srcs)
        issue = max(dispatch, operands)
        if op.is_memory:
            if op.mem is None:
                raise SimulationError(f"{op.kind.value} without an effective address", op.seq)
            issue = max(issue, self.fence_barrier)

        outcome: Optional[_LoadOutcome] = None
        if op.kind is OpKind.FENCE:
            issue = max(issue, self.max_complete)
            complete = issue + 1
            self.fence_barrier = max(self.fence_barrier, complete)
        elif op.kind is OpKind.LOAD:
            outcome = self._load(op, issue, tag, region)
            complete = outcome.data
        elif op.kind is OpKind.STORE:
            assert op.mem is not None
            self.memory.access(op.mem.addr, AccessKind.FILL_ONLY, issue)
            complete = issue + 1
        elif op.branch_info is not None:
            complete = issue + op.branch_info.resolve_after
        else:
            complete = issue + 1

        commit = self._commit_time(complete)
        self.max_complete = max(self.max_complete, complete)

        wake = complete
        tainted = bool(tainted_srcs)
        if outcome is not None:
            wake = wakeup_time(
                self.policy,
                LoadTiming(
                    issue_done=outcome.data,
                    commit=commit,
                    nonspec=self.nonspec,
                    replay_done=outcome.replay_done,
                    smact_hit=not outcome.gated,
                ),
            )
            tainted = tainted or outcome.tainted
        if op.branch_info is not None:
            self.nonspec = max(self.nonspec, complete)

        if op.kind is OpKind.STORE:
            assert op.mem is not None
            self.memory.access(op.mem.addr, AccessKind.STORE, commit)
            self.stores.append(
                _Store(op.mem.addr, op.mem.size, issue, commit, operands, bool(tainted_srcs))
            )

        if self.policy.is_safebet and op.mem is not None and op.is_memory:
            if outcome is None or outcome.verdict is not Verdict.HIT_BY_INHERITANCE:
                key = source_key(self.policy.safebet, tag, op.pc, region)
                self.events.append((commit, _INSERT, (op.mem.addr, key)))

        if self.monitor is not None:
            self.monitor.observe(op, True, tainted_srcs)
        if op.dst_reg:
            self.regs.write(op.dst_reg, wake, tainted)
        self._occupy(fetch, dispatch, issue, commit)
        self.stats.committed_instructions += 1
        return complete, commit

    # -- wrong path -------------------------------------------------------

    def _wrong_path_load(
        self,
        op: MicroOp,
        issue: int,
        tag: int,
        region: int,
        speculative: List[_Store],
        nonspec: int,
    ) -> Tuple[int, bool]:
        assert op.mem is not None
        addr, size = op.mem.addr, op.mem.size
        if self.policy.is_safebet:
            verdict = self._verdict(addr, tag, op.pc, region)
            self.stats.smact.wrong_path_lookups += 1
            if not verdict.is_hit:
                self.stats.smact.wrong_path_misses += 1
                self.memory.access(addr, AccessKind.FILL_ONLY, issue)
                # the replay would happen at the ROB head, which this op never reaches
                return NEVER, False

        # secret bytes stay secret whether they come from memory or a store buffer
        tainted = op.secret_tag or self.trace.header.is_secret(addr, size)
        store = self._forwarding_store(addr, size, issue, speculative)
        if store is not None:
            self.stats.store_forwards += 1
            data = max(issue, store.data_ready) + 1
            tainted = tainted or store.tainted
        else:
            data = issue + self.memory.access(addr, AccessKind.LOAD, issue).latency
        wake = wakeup_time(self.policy, LoadTiming(issue_done=data, nonspec=nonspec))
        return wake, tainted

    def _wrong_path(self, opener: MicroOp, run: Sequence[MicroOp], squash_at: int) -> None:
        """Fetch and execute ``run`` until ``opener`` resolves at ``squash_at``."""
        checkpoint = self.tracker.checkpoint()
        overlay = self.regs.fork()
        speculative: List[_Store] = []
        nonspec = self.nonspec
        fence_barrier = self.fence_barrier
        max_complete = self.max_complete
        fetched = 0

        if opener.is_transfer and run:
            self._decode_transfer(opener, run[0].pc, None)

        for idx, op in enumerate(run):
            fetch = self._fetch_time()
            if fetch >= squash_at:
                break
            dispatch = self._dispatch_time(fetch)
            if dispatch >= squash_at:
                break
            fetched += 1
            self._advance(dispatch)

            tag = self.tracker.current
            region = self._region(op.pc, op.seq)
            srcs = op.src_regs
            operands = overlay.operands_ready(srcs)
            tainted_srcs = overlay.tainted_sources(srcs)
            issue = max(dispatch, operands)
            if op.is_memory:
                if op.mem is None:
                    raise SimulationError(f"{op.kind.value} without an effective address", op.seq)
                issue = max(issue, fence_barrier)
            if op.kind is OpKind.FENCE:
                issue = max(issue, max_complete)

            issued = issue < squash_at
            wake = NEVER
            tainted = False
            if issued:
                self.stats.wrong_path_issued += 1
                if op.kind is OpKind.LOAD:
                    wake, tainted = self._wrong_path_load(
                        op, issue, tag, region, speculative, nonspec
                    )
                elif op.kind is OpKind.STORE:
                    assert op.mem is not None
                    self.memory.access(op.mem.addr, AccessKind.FILL_ONLY, issue)
                    speculative.append(
                        _Store(op.mem.addr, op.mem.size, issue, NEVER, operands, bool(tainted_srcs))
                    )
                    wake = issue + 1
                elif op.branch_info is not None:
                    wake = issue + op.branch_info.resolve_after
                    nonspec = max(nonspec, wake)
                else:
                    wake = issue + 1
                    if op.kind is OpKind.FENCE:
                        fence_barrier = max(fence_barrier, wake)
                max_complete = max(max_complete, min(wake, squash_at))
                if wake >= squash_at:
                    wake = NEVER
                tainted = (tainted or bool(tainted_srcs)) and wake < NEVER

            if self.monitor is not None:
                self.monitor.observe(op, issued, tainted_srcs)
            if op.dst_reg:
                overlay.write(op.dst_reg, wake, tainted)
            if op.is_transfer:
                target = op.target
                if target is None and idx + 1 < len(run):
                    target = run[idx + 1].pc
                self._decode_transfer(op, target, None)
            self._occupy(fetch, dispatch, issue, squash_at)

        self.tracker.restore(checkpoint)
        self.fetch_floor = max(self.fetch_floor, squash_at + 1 + self.core.mispredict_penalty)
        self.stats.squashes += 1
        self.stats.wrong_path_fetched += fetched

    # -- directives -------------------------------------------------------

    def _serialize(self, cost: int) -> None:
        """Drain the window, then occupy the core for ``cost`` cycles."""
        self._advance(NEVER)
        self.last_commit += cost
        self.fetch_floor = max(self.fetch_floor, self.last_commit + 1)

    def _handle(self, invocation: HandlerInvocation) -> Optional[int]:
        """Run the revocation handler; None when the policy has no handler."""
        assert self.allocator is not None and self.handler is not None
        if not self.policy.is_safebet:
            self.allocator.reclaim(invocation)
            return None
        self._advance(NEVER)
        result = self.handler(invocation)
        self.stats.handler_invocations += 1
        self.stats.handler_cycles += result.cycles
        self.stats.entries_revoked += result.entries_revoked
        return result.cycles

    def _directive(self, directive: Directive, seq: Optional[int]) -> None:
        if directive.kind is DirectiveKind.SET_OWNER:
            self._serialize(0)
            self.tracker.set_owner(directive.arg)
            return
        if self.allocator is None:
            raise SimulationError(
                f"{directive.kind.value} directive in a trace without a #heap arena", seq
            )
        try:
            if directive.kind is DirectiveKind.MALLOC:
                self.allocator.malloc64(directive.arg)
                return
            invocation = self.allocator.lazy_free(directive.arg)
        except AllocatorError as e:
            raise SimulationError(str(e), seq) from e
        if invocation is not None:
            cost = self._handle(invocation)
            if cost is not None:
                self._serialize(cost)

    # -- driver -------------------------------------------------------------

    @staticmethod
    def _next_correct_pcs(ops: Sequence[MicroOp]) -> List[Optional[int]]:
        result: List[Optional[int]] = [None] * len(ops)
        following: Optional[int] = None
        for i in range(len(ops) - 1, -1, -1):
            result[i] = following
            if not ops[i].wrong_path:
                following = ops[i].pc
        return result

    def run(self) -> SimStats:
        ops = self.trace.ops
        directives = sorted(self.trace.directives, key=lambda d: d.position)
        next_pc = self._next_correct_pcs(ops)
        d = 0
        i = 0
        while i < len(ops):
            while d < len(directives) and directives[d].position <= i:
                self._directive(directives[d], ops[i].seq)
                d += 1
            op = ops[i]
            if op.wrong_path:
                raise SimulationError("wrong-path op without a mispredicted opener", op.seq)
            complete, commit = self._correct_path(op)
            opener_index = i
            i += 1
            if op.mispredicted:
                j = i
                while j < len(ops) and ops[j].wrong_path:
                    j += 1
                self._wrong_path(op, ops[i:j], complete)
                i = j
            if op.is_transfer:
                target = op.target if op.target is not None else next_pc[opener_index]
                self._decode_transfer(op, target, commit)
        for directive in directives[d:]:
            self._directive(directive, None)
        return self._finish()

    def _finish(self) -> SimStats:
        self._advance(NEVER)
        extra = 0
        if self.allocator is not None:
            invocation = self.allocator.drain()
            if invocation is not None:
                extra = self._handle(invocation) or 0

        stats = self.stats
        stats.cycles = self.last_commit + extra
        stats.cache = self.memory.stats()
        if self.policy.is_safebet:
            stats.smact_table = self.smact.stats.as_dict()
        stats.instance_crossings = self.tracker.stats.commits
        self.logger.debug(
            f"{stats.policy} on {stats.geometry}: {stats.cycles} cycles, "
            f"{stats.committed_instructions} committed, {stats.squashes} squashes, "
            f"{stats.smact.total_miss} SMACT misses"
        )
        return stats


def run(
    trace: Trace,
    policy: PolicyConfig,
    core: Optional[CoreConfig] = None,
    geometry: Optional[SmactGeometry] = None,
    hierarchy: Optional[HierarchyConfig] = None,
    lazy_free: Optional[LazyFreeConfig] = None,
    smact: Optional[Smact] = None,
    monitor: Optional[TaintObserver] = None,
) -> SimStats:
    """Simulate ``trace`` to the end under ``policy``."""
    return Pipeline(
        trace,
        policy,
        core=core,
        geometry=geometry,
        hierarchy=hierarchy,
        lazy_free=lazy_free,
        smact=smact,
        monitor=monitor,
    ).run()
