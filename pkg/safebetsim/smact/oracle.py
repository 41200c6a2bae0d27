"""Brute-force reference for the permission rule the table approximates."""

from typing import Dict, Iterable, Mapping, Optional, Set, Tuple, Union

History = Union[Mapping[int, Set[int]], Iterable[Tuple[int, int]]]

CHUNK_BYTES = 64


def chunk_of(a: int, chunk_bytes: int = CHUNK_BYTES) -> int:
    return a // chunk_bytes


def oracle_permitted(
    history: History,
    a: int,
    inst: int,
    lbtos_inst: Optional[int] = None,
    accessor_is_owner: bool = False,
    chunk_bytes: int = CHUNK_BYTES,
) -> bool:
    """True iff (chunk(a), inst) was committed, or inherited by the owner.

    ``history`` is either a collection of (chunk, inst) pairs or a mapping
    chunk -> set of insts as kept by :class:`PermissionOracle`.
    """
    chunk = chunk_of(a, chunk_bytes)
    if isinstance(history, Mapping):
        holders = history.get(chunk, set())
        if inst in holders:
            return True
        return accessor_is_owner and lbtos_inst is not None and lbtos_inst in holders
    pairs = history if isinstance(history, (set, frozenset)) else set(history)
    if (chunk, inst) in pairs:
        return True
    return accessor_is_owner and lbtos_inst is not None and (chunk, lbtos_inst) in pairs


class PermissionOracle:
    """Committed-permission log with revocation."""

    def __init__(self, chunk_bytes: int = CHUNK_BYTES):
        self.chunk_bytes = chunk_bytes
        self.history: Dict[int, Set[int]] = {}

    def commit(self, a: int, inst: int) -> None:
        self.history.setdefault(chunk_of(a, self.chunk_bytes), set()).add(inst)

    def revoke(self, lo: int, length: int) -> None:
        first = chunk_of(lo, self.chunk_bytes)
        last = chunk_of(lo + length - 1, self.chunk_bytes)
        if last - first + 1 > len(self.history):
            doomed = [c for c in self.history if first <= c <= last]
        else:
            doomed = [c for c in range(first, last + 1) if c in self.history]
        for chunk in doomed:
            del self.history[chunk]

    def permitted(
        self,
        a: int,
        inst: int,
        lbtos_inst: Optional[int] = None,
        accessor_is_owner: bool = False,
    ) -> bool:
        return oracle_permitted(
            self.history, a, inst, lbtos_inst, accessor_is_owner, self.chunk_bytes
        )
