from dataclasses import dataclass
from typing import List, Optional

from .model import DirectiveKind, MicroOp, OpKind, Trace


@dataclass(frozen=True)
class Diagnostic:
    seq: Optional[int]
    message: str

    def __str__(self) -> str:
        where = f"seq {self.seq}" if self.seq is not None else "header"
        return f"{where}: {self.message}"


def _check_wrong_path_runs(trace: Trace, out: List[Diagnostic]) -> None:
    ops = trace.ops
    i = 0
    while i < len(ops):
        op = ops[i]
        if not op.wrong_path:
            i += 1
            continue
        start = i
        while i < len(ops) and ops[i].wrong_path:
            i += 1
        opener: Optional[MicroOp] = ops[start - 1] if start > 0 else None
        if opener is None or not opener.mispredicted:
            out.append(
                Diagnostic(op.seq, "wrong-path op with no preceding mispredicted branch")
            )
            continue
        if i == len(ops):
            out.append(
                Diagnostic(ops[-1].seq, "wrong-path run is never closed by a correct-path op")
            )
        shadow = opener.branch_info.shadow if opener.branch_info else None
        if shadow is not None and shadow != i - start:
            out.append(
                Diagnostic(
                    opener.seq,
                    f"wrong-path run length {i - start} differs from shadow {shadow}",
                )
            )

    for op in ops:
        info = op.branch_info
        if info is None or not info.shadow:
            continue
        if not info.mispredicted:
            out.append(Diagnostic(op.seq, "shadow declared on a correctly predicted op"))


def validate_trace(t: Trace) -> List[Diagnostic]:
    """Check trace invariants; returns one diagnostic per violation."""
    out: List[Diagnostic] = []
    header = t.header
    region_map = header.region_map
    owner_ids = [r.id for r in header.regions if r.is_owner]
    if len(owner_ids) > 1:
        out.append(Diagnostic(None, "more than one owner region"))

    last_seq: Optional[int] = None
    for op in t.ops:
        if last_seq is not None and op.seq <= last_seq:
            out.append(Diagnostic(op.seq, "seq is not strictly increasing"))
        last_seq = op.seq

        if not region_map.contains(op.pc):
            out.append(Diagnostic(op.seq, f"pc 0x{op.pc:x} outside declared regions"))
        if op.target is not None and not region_map.contains(op.target):
            out.append(Diagnostic(op.seq, f"tgt 0x{op.target:x} outside declared regions"))

        if op.is_memory and op.mem is None:
            out.append(Diagnostic(op.seq, f"{op.kind.value} without an address"))
        if op.kind is OpKind.BRANCH and op.branch_info is None:
            out.append(Diagnostic(op.seq, "branch without a branch annotation"))

        if op.wrong_path or op.mem is None:
            continue
        rng = header.data_range_of(op.mem.addr, op.mem.size)
        if rng is None:
            out.append(
                Diagnostic(
                    op.seq,
                    f"committed {op.kind.value} to undeclared address 0x{op.mem.addr:x}",
                )
            )

    _check_wrong_path_runs(t, out)

    for d in t.directives:
        seq = t.ops[d.position - 1].seq if 0 < d.position <= len(t.ops) else None
        if 0 < d.position < len(t.ops) and t.ops[d.position].wrong_path:
            out.append(Diagnostic(seq, f"directive {d.kind.value} inside a wrong-path run"))
        if d.kind is DirectiveKind.SET_OWNER and d.arg not in region_map.by_id:
            out.append(Diagnostic(seq, f"set-owner names undeclared region {d.arg}"))
        if d.kind in (DirectiveKind.MALLOC, DirectiveKind.FREE) and header.heap is None:
            out.append(Diagnostic(seq, f"{d.kind.value} directive without a #heap arena"))
        if d.kind is DirectiveKind.MALLOC and d.arg <= 0:
            out.append(Diagnostic(seq, "malloc of a non-positive size"))

    out.sort(key=lambda diag: (-1 if diag.seq is None else diag.seq))
    return out
