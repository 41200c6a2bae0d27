"""
Dynamic instance tracking for region-crossing calls and returns.

Two views of the instance stack are kept. The decode-side view follows every
decoded crossing (including wrong-path ones) and is checkpointed at
mispredicted control ops; the committed view changes only when a crossing
commits. The instance counter only ever moves forward, so an ID minted on a
squashed path is never handed out again.
"""

from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Deque, Dict, List, Optional, Tuple

from safebetsim.utils.logger import get_logger

INST_BITS = 22
INST_LIMIT = 1 << INST_BITS
DEPTH_LIMIT = 64
ENTRY_INST = 1


class TransferKind(str, Enum):
    CALL = "call"
    RETURN = "return"


@dataclass(frozen=True)
class TransferClass:
    new_instance: bool = False
    inherit: bool = False
    retain: bool = False
    purge: bool = False


@dataclass(frozen=True)
class Frame:
    region: int
    inst: int


@dataclass(frozen=True)
class MatchContext:
    current: int
    lbtos: Optional[int]
    current_is_owner: bool
    committed_tos: int


@dataclass(frozen=True)
class OverflowEvent:
    """The counter wrapped; every live ID was renumbered from ``renamed``."""

    renamed: Dict[int, int]
    counter: int


@dataclass(frozen=True)
class Checkpoint:
    spec_stack: Tuple[Frame, ...]
    current: int
    inflight: int
    generation: int


@dataclass
class _InFlight:
    kind: TransferKind
    src: int
    dst: int
    inst: int
    cls: TransferClass


@dataclass
class TrackerStats:
    crossings: int = 0
    commits: int = 0
    bottom_drops: int = 0
    underflows: int = 0
    overflows: int = 0
    restores: int = 0


def classify_transfer(
    kind: TransferKind, from_region: int, to_region: int, owner: Optional[int]
) -> TransferClass:
    """Map a region-crossing call or return to its instance action."""
    if from_region == to_region:
        raise ValueError("same-region transfers do not change instances")
    kind = TransferKind(kind)
    if kind is TransferKind.CALL:
        if owner is not None and to_region == owner:
            return TransferClass(new_instance=True, inherit=True)
        return TransferClass(new_instance=True)
    if owner is not None and from_region == owner:
        return TransferClass(retain=True)
    return TransferClass(new_instance=True, purge=True)


class InstanceTracker:
    def __init__(
        self,
        entry_region: int,
        owner: Optional[int] = None,
        depth_limit: int = DEPTH_LIMIT,
        inst_limit: int = INST_LIMIT,
    ):
        if depth_limit < 1:
            raise ValueError("depth limit must be at least one frame")
        self.logger = get_logger("InstanceTracker")
        self.owner = owner
        self.depth_limit = depth_limit
        self.inst_limit = inst_limit
        self.counter = ENTRY_INST
        self.stack: List[Frame] = [Frame(entry_region, ENTRY_INST)]
        self.shadow = 1
        self.spec_stack: List[Frame] = list(self.stack)
        self.current = ENTRY_INST
        self.stats = TrackerStats()
        self.generation = 0
        self._renames: List[Dict[int, int]] = []
        self._inflight: Deque[_InFlight] = deque()
        self._overflow: Optional[OverflowEvent] = None

    def set_owner(self, region: Optional[int]) -> None:
        self.owner = region

    def _mint(self) -> int:
        if self.counter + 1 >= self.inst_limit:
            self._renumber()
        self.counter += 1
        return self.counter

    def _renumber(self) -> None:
        """Give every live ID a fresh number after the counter wraps."""
        renamed: Dict[int, int] = {}

        def fresh(inst: int) -> int:
            if inst not in renamed:
                renamed[inst] = len(renamed) + 1
            return renamed[inst]

        self.stack = [Frame(f.region, fresh(f.inst)) for f in self.stack]
        self.spec_stack = [Frame(f.region, fresh(f.inst)) for f in self.spec_stack]
        self.current = fresh(self.current)
        for pending in self._inflight:
            pending.inst = fresh(pending.inst)
        self.counter = len(renamed)
        self._renames.append(renamed)
        self.generation += 1
        self.stats.overflows += 1
        self._overflow = OverflowEvent(renamed=dict(renamed), counter=self.counter)
        self.logger.warning(
            f"Instance counter overflow: renumbered {len(renamed)} live IDs, "
            "SMACT must be flushed"
        )

    def take_overflow(self) -> Optional[OverflowEvent]:
        """Return and clear a pending overflow signal."""
        event, self._overflow = self._overflow, None
        return event

    def _transition(
        self,
        stack: List[Frame],
        kind: TransferKind,
        dst: int,
        inst: int,
        cls: TransferClass,
        committed: bool,
    ) -> None:
        # shadow is the logical depth: live frames plus frames dropped off the bottom
        if kind is TransferKind.CALL:
            stack.append(Frame(dst, inst))
            if committed:
                self.shadow += 1
            if len(stack) > self.depth_limit:
                stack.pop(0)
                if committed:
                    self.stats.bottom_drops += 1
                    self.logger.debug("Instance stack full, dropped bottom frame")
            return

        if cls.retain:
            if stack:
                stack.pop()
            if stack and stack[-1].region == dst:
                if committed:
                    self.shadow -= 1
                return
            if committed:
                self.shadow = max(self.shadow - 1, 0)
                if not stack and self.shadow > 0:
                    # the caller's frame was pushed out earlier and cannot be retained
                    self.stats.underflows += 1
                    self.logger.debug(f"Instance stack underflow into region {dst}")
                else:
                    self.shadow = 1
            stack.clear()
            stack.append(Frame(dst, inst))
            return

        stack.clear()
        stack.append(Frame(dst, inst))
        if committed:
            self.shadow = len(stack)

    def on_decode_transfer(self, kind: TransferKind, from_region: int, to_region: int) -> int:
        """Mint an ID for a decoded crossing; returns the tag for younger ops.

        For a retaining return the tag is the caller's retained ID; otherwise
        it is the freshly minted one.
        """
        kind = TransferKind(kind)
        cls = classify_transfer(kind, from_region, to_region, self.owner)
        inst = self._mint()
        self.stats.crossings += 1
        self._transition(self.spec_stack, kind, to_region, inst, cls, committed=False)
        self.current = self.spec_stack[-1].inst
        self._inflight.append(_InFlight(kind, from_region, to_region, inst, cls))
        return self.current

    def on_commit_transfer(self, kind: TransferKind, from_region: int, to_region: int) -> None:
        """Apply the oldest decoded crossing to the committed stack."""
        kind = TransferKind(kind)
        if not self._inflight:
            raise RuntimeError("commit of a region crossing that was never decoded")
        pending = self._inflight.popleft()
        if (pending.kind, pending.src, pending.dst) != (kind, from_region, to_region):
            raise RuntimeError(
                f"crossing commit order mismatch: decoded {pending.kind.value} "
                f"{pending.src}->{pending.dst}, committing {kind.value} "
                f"{from_region}->{to_region}"
            )
        self.stats.commits += 1
        self._transition(self.stack, kind, to_region, pending.inst, pending.cls, committed=True)

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            spec_stack=tuple(self.spec_stack),
            current=self.current,
            inflight=len(self._inflight),
            generation=self.generation,
        )

    def restore(self, cp: Checkpoint) -> None:
        """Roll the decode-side view back to a checkpoint; the counter stays."""
        frames = list(cp.spec_stack)
        current = cp.current
        for generation in range(cp.generation, self.generation):
            renamed = self._renames[generation]

            def remap(inst: int) -> int:
                if inst not in renamed:
                    self.counter += 1
                    renamed[inst] = self.counter
                return renamed[inst]

            frames = [Frame(f.region, remap(f.inst)) for f in frames]
            current = remap(current)
        self.spec_stack = frames
        self.current = current
        while len(self._inflight) > cp.inflight:
            self._inflight.pop()
        self.stats.restores += 1

    def match_context(self) -> MatchContext:
        tos = self.stack[-1]
        return MatchContext(
            current=self.current,
            lbtos=self.stack[-2].inst if len(self.stack) >= 2 else None,
            current_is_owner=self.owner is not None and tos.region == self.owner,
            committed_tos=tos.inst,
        )

    @property
    def inflight(self) -> int:
        return len(self._inflight)

    def dump(self) -> str:
        frames = ",".join(f"({f.region},{f.inst})" for f in self.stack)
        owner = "-" if self.owner is None else str(self.owner)
        return f"inst ctr={self.counter} shadow={self.shadow} stack=[{frames}] owner={owner}"
